"""Writer/reader for the shared embedding dataset format.

A dataset is ``<stem>.manifest.json`` plus ``<stem>.emb``. The binary file
is magic ``EMB1``, u32 version (1), u32 dim, u64 row count, then float32
little-endian rows in rowIndex order. This module is self-contained so the
extractor depends on the training package only through these files.
"""

from __future__ import annotations

from dataclasses import dataclass
import json
from pathlib import Path
import struct

import numpy as np

MAGIC = b"EMB1"
VERSION = 1
HEADER = struct.Struct("<IIQ")


class FormatError(ValueError):
    """Dataset files violate the on-disk contract."""


@dataclass
class Record:
    sample_id: str
    label_index: int
    vector: np.ndarray


@dataclass
class Dataset:
    dataset_name: str
    model_name: str
    dim: int
    label_names: list[str]
    records: list[Record]


def stem_paths(path) -> tuple[Path, Path]:
    p = Path(path)
    name = p.name
    for suffix in (".manifest.json", ".emb"):
        if name.endswith(suffix):
            p = p.with_name(name[: -len(suffix)])
            break
    return p.with_name(p.name + ".manifest.json"), p.with_name(p.name + ".emb")


def write(ds: Dataset, path) -> None:
    for r in ds.records:
        if r.vector.shape != (ds.dim,):
            raise FormatError(
                f"vector for {r.sample_id!r} has shape {r.vector.shape}, dim is {ds.dim}"
            )
    manifest_path, emb_path = stem_paths(path)
    manifest = {
        "datasetName": ds.dataset_name,
        "modelName": ds.model_name,
        "dim": ds.dim,
        "labelNames": ds.label_names,
        "records": [
            {"sampleId": r.sample_id, "labelIndex": r.label_index, "rowIndex": i}
            for i, r in enumerate(ds.records)
        ],
    }
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    manifest_path.write_text(json.dumps(manifest, indent=1), encoding="utf-8")
    with open(emb_path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(HEADER.pack(VERSION, ds.dim, len(ds.records)))
        for r in ds.records:
            fh.write(np.ascontiguousarray(r.vector, dtype="<f4").tobytes())


def read(path) -> Dataset:
    manifest_path, emb_path = stem_paths(path)
    if not manifest_path.exists():
        raise FormatError(f"missing manifest {manifest_path}")
    if not emb_path.exists():
        raise FormatError(f"missing binary payload {emb_path}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    blob = emb_path.read_bytes()
    if blob[:4] != MAGIC:
        raise FormatError(f"{emb_path}: bad magic {blob[:4]!r}")
    version, dim, rows = HEADER.unpack(blob[4 : 4 + HEADER.size])
    if version != VERSION:
        raise FormatError(f"{emb_path}: unsupported version {version}")
    if dim != manifest["dim"]:
        raise FormatError(f"dim mismatch: manifest {manifest['dim']} vs binary {dim}")
    if rows != len(manifest["records"]):
        raise FormatError(
            f"row count mismatch: manifest {len(manifest['records'])} vs binary {rows}"
        )
    expected = 4 + HEADER.size + 4 * dim * rows
    if len(blob) != expected:
        raise FormatError(f"{emb_path}: payload is {len(blob)} bytes, expected {expected}")
    matrix = np.frombuffer(blob[4 + HEADER.size :], dtype="<f4").reshape(rows, dim)
    records: list[Record | None] = [None] * rows
    for meta in manifest["records"]:
        idx = meta["rowIndex"]
        if not 0 <= idx < rows or records[idx] is not None:
            raise FormatError(f"bad rowIndex {idx} for {meta['sampleId']!r}")
        records[idx] = Record(meta["sampleId"], meta["labelIndex"], matrix[idx].copy())
    return Dataset(
        dataset_name=manifest["datasetName"],
        model_name=manifest["modelName"],
        dim=dim,
        label_names=list(manifest["labelNames"]),
        records=records,
    )
