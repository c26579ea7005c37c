"""Directory-to-dataset extraction and dataset verification."""

from __future__ import annotations

from dataclasses import dataclass, field
import logging
from pathlib import Path

import numpy as np

from . import format as fmt
from .audio import AudioError, load_wav_16k
from .backends import EXPECTED_DIM, HFBackend
from .labels import LabelError, LabelRule

log = logging.getLogger("embextract")


@dataclass
class ExtractionResult:
    dataset: fmt.Dataset
    skipped: list[tuple[str, str]] = field(default_factory=list)  # (file, reason)


def extract_directory(backend: HFBackend, audio_dir, rule: LabelRule,
                      dataset_name: str = "") -> ExtractionResult:
    """Embed every .wav under audio_dir; undecodable files are skipped."""
    root = Path(audio_dir)
    files = sorted(root.rglob("*.wav"))
    if not files:
        raise AudioError(f"no .wav files under {root}")
    skipped: list[tuple[str, str]] = []
    rows: list[tuple[str, str, np.ndarray]] = []
    for path in files:
        sample_id = path.relative_to(root).with_suffix("").as_posix()
        try:
            label = rule.label_for(path)
            waveform = load_wav_16k(path)
        except (AudioError, LabelError) as exc:
            log.warning("skipping %s: %s", path, exc)
            skipped.append((str(path), str(exc)))
            continue
        vector = backend.embed(waveform).mean(axis=0).astype(np.float32)
        rows.append((sample_id, label, vector))
    if not rows:
        raise AudioError(f"every file under {root} was skipped")
    label_names = sorted({label for _, label, _ in rows})
    index = {name: i for i, name in enumerate(label_names)}
    records = [
        fmt.Record(sample_id, index[label], vector)
        for sample_id, label, vector in rows
    ]
    ds = fmt.Dataset(
        dataset_name=dataset_name or root.name,
        model_name=backend.model_id,
        dim=backend.dim,
        label_names=label_names,
        records=records,
    )
    return ExtractionResult(dataset=ds, skipped=skipped)


def verify_dataset(path, expected_files: int | None = None) -> list[str]:
    """Re-check format invariants; returns violations (empty means valid)."""
    violations: list[str] = []
    try:
        ds = fmt.read(path)
    except fmt.FormatError as exc:
        return [str(exc)]
    seen = set()
    for r in ds.records:
        if r.sample_id in seen:
            violations.append(f"duplicate sampleId {r.sample_id!r}")
        seen.add(r.sample_id)
        if not 0 <= r.label_index < len(ds.label_names):
            violations.append(f"labelIndex {r.label_index} out of range")
    expected_dim = EXPECTED_DIM.get(ds.model_name)
    if expected_dim is not None and ds.dim != expected_dim:
        violations.append(
            f"model {ds.model_name} should emit {expected_dim}-d vectors, "
            f"dataset says {ds.dim}"
        )
    if expected_files is not None and len(ds.records) != expected_files:
        violations.append(
            f"record count {len(ds.records)} != expected {expected_files}"
        )
    return violations
