"""Embedding datasets: bit-exact file format, pairing, folds, synthesis.

On disk a dataset is two files sharing a stem: ``<stem>.manifest.json``
(names, label vocabulary, record index) and ``<stem>.emb`` (magic ``EMB1``,
u32 version, u32 dim, u64 row count, then float32 little-endian rows in
rowIndex order).
"""

from __future__ import annotations

from dataclasses import dataclass, field
import json
from pathlib import Path
import struct

import numpy as np

from .rng import RandomSource


class DataError(ValueError):
    """Malformed dataset files or an impossible pairing/split request."""


EMB_MAGIC = b"EMB1"
EMB_VERSION = 1


@dataclass
class EmbeddingRecord:
    sample_id: str
    label_index: int
    vector: np.ndarray  # float32, length == dataset dim


@dataclass
class EmbeddingDataset:
    dataset_name: str
    model_name: str
    dim: int
    label_names: list[str]
    records: list[EmbeddingRecord]

    def validate(self) -> None:
        seen = set()
        for r in self.records:
            if not r.sample_id:
                raise DataError("empty sampleId")
            if r.sample_id in seen:
                raise DataError(f"duplicate sampleId {r.sample_id!r}")
            seen.add(r.sample_id)
            if not 0 <= r.label_index < len(self.label_names):
                raise DataError(
                    f"labelIndex {r.label_index} out of range for {r.sample_id!r}"
                )
            if r.vector.shape != (self.dim,):
                raise DataError(
                    f"vector length {r.vector.shape} != dim {self.dim} for {r.sample_id!r}"
                )

    def matrix(self) -> np.ndarray:
        if not self.records:
            return np.zeros((0, self.dim), dtype=np.float32)
        return np.stack([r.vector for r in self.records]).astype(np.float32)

    def labels(self) -> np.ndarray:
        return np.array([r.label_index for r in self.records], dtype=np.int64)


def _paths(path) -> tuple[Path, Path]:
    p = Path(path)
    name = p.name
    for suffix in (".manifest.json", ".emb"):
        if name.endswith(suffix):
            p = p.with_name(name[: -len(suffix)])
            break
    return p.with_name(p.name + ".manifest.json"), p.with_name(p.name + ".emb")


def write_dataset(ds: EmbeddingDataset, path) -> None:
    ds.validate()
    manifest_path, emb_path = _paths(path)
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
        fh.write(EMB_MAGIC)
        fh.write(struct.pack("<IIQ", EMB_VERSION, ds.dim, len(ds.records)))
        for r in ds.records:
            fh.write(np.ascontiguousarray(r.vector, dtype="<f4").tobytes())


def read_dataset(path) -> EmbeddingDataset:
    manifest_path, emb_path = _paths(path)
    if not manifest_path.exists():
        raise DataError(f"missing manifest {manifest_path}")
    if not emb_path.exists():
        raise DataError(f"missing binary payload {emb_path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{manifest_path}: invalid JSON ({exc})") from exc
    blob = emb_path.read_bytes()
    if blob[:4] != EMB_MAGIC:
        raise DataError(f"{emb_path}: bad magic {blob[:4]!r}")
    version, dim, rows = struct.unpack("<IIQ", blob[4:20])
    if version != EMB_VERSION:
        raise DataError(f"{emb_path}: unsupported version {version}")
    if dim != manifest["dim"]:
        raise DataError(f"dim mismatch: manifest {manifest['dim']} vs binary {dim}")
    if rows != len(manifest["records"]):
        raise DataError(
            f"row count mismatch: manifest {len(manifest['records'])} vs binary {rows}"
        )
    expected = 20 + 4 * dim * rows
    if len(blob) != expected:
        raise DataError(f"{emb_path}: payload is {len(blob)} bytes, expected {expected}")
    matrix = np.frombuffer(blob[20:], dtype="<f4").reshape(rows, dim)
    records = [None] * rows
    for meta in manifest["records"]:
        idx = meta["rowIndex"]
        if not 0 <= idx < rows or records[idx] is not None:
            raise DataError(f"bad rowIndex {idx} for {meta['sampleId']!r}")
        records[idx] = EmbeddingRecord(
            sample_id=meta["sampleId"],
            label_index=meta["labelIndex"],
            vector=matrix[idx].copy(),
        )
    ds = EmbeddingDataset(
        dataset_name=manifest["datasetName"],
        model_name=manifest["modelName"],
        dim=dim,
        label_names=list(manifest["labelNames"]),
        records=records,
    )
    ds.validate()
    return ds


@dataclass
class AlignedPair:
    """Two datasets restricted to shared sample ids, in identical order."""

    sample_ids: list[str]
    labels: np.ndarray
    x1: np.ndarray  # (N, dim1)
    x2: np.ndarray  # (N, dim2)
    label_names: list[str]
    dropped_a: int
    dropped_b: int


def align_pair(a: EmbeddingDataset, b: EmbeddingDataset) -> AlignedPair:
    if a.label_names != b.label_names:
        raise DataError(
            f"label vocabularies differ: {a.label_names} vs {b.label_names}"
        )
    by_id_b = {r.sample_id: r for r in b.records}
    ids, labels, rows_a, rows_b = [], [], [], []
    for r in a.records:
        other = by_id_b.get(r.sample_id)
        if other is None:
            continue
        if other.label_index != r.label_index:
            raise DataError(
                f"label disagreement for {r.sample_id!r}: "
                f"{r.label_index} vs {other.label_index}"
            )
        ids.append(r.sample_id)
        labels.append(r.label_index)
        rows_a.append(r.vector)
        rows_b.append(other.vector)
    if not ids:
        raise DataError("no overlap between sample id sets")
    return AlignedPair(
        sample_ids=ids,
        labels=np.array(labels, dtype=np.int64),
        x1=np.stack(rows_a).astype(np.float32),
        x2=np.stack(rows_b).astype(np.float32),
        label_names=list(a.label_names),
        dropped_a=len(a.records) - len(ids),
        dropped_b=len(b.records) - len(ids),
    )


@dataclass
class FoldSplit:
    folds: list[list[str]]
    seed: int

    @property
    def k(self) -> int:
        return len(self.folds)


def stratified_fold_ids(sample_ids: list[str], labels, k: int, seed: int) -> list[list[str]]:
    """Seeded within-class shuffle, round-robin assignment to folds."""
    labels = np.asarray(labels)
    by_class: dict[int, list[str]] = {}
    for sid, cls in zip(sample_ids, labels):
        by_class.setdefault(int(cls), []).append(sid)
    for cls, ids in sorted(by_class.items()):
        if len(ids) < k:
            raise DataError(f"class {cls} has {len(ids)} samples, fewer than k={k}")
    folds: list[list[str]] = [[] for _ in range(k)]
    for cls, ids in sorted(by_class.items()):
        gen = RandomSource(seed, f"kfold/class{cls}").generator()
        order = np.array(ids)[gen.permutation(len(ids))]
        for i, sid in enumerate(order):
            folds[i % k].append(str(sid))
    return folds


def stratified_kfold(ds: EmbeddingDataset, k: int = 5, seed: int = 0) -> FoldSplit:
    ids = [r.sample_id for r in ds.records]
    return FoldSplit(folds=stratified_fold_ids(ids, ds.labels(), k, seed), seed=seed)


@dataclass
class SyntheticSpec:
    """Complementary-modality synthetic embeddings.

    Classes listed together in ``merged_1`` share a mean in the first
    modality (likewise ``merged_2``), so neither modality alone separates
    everything but the pair does.
    """

    num_classes: int = 4
    samples_per_class: int = 100
    dim1: int = 64
    dim2: int = 64
    noise_sigma: float = 1.0
    merged_1: list[list[int]] = field(default_factory=lambda: [[0, 1]])
    merged_2: list[list[int]] = field(default_factory=lambda: [[2, 3]])
    seed: int = 7

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.samples_per_class < 1 or self.dim1 < 1 or self.dim2 < 1:
            raise ValueError("sizes must be positive")
        if self.noise_sigma <= 0:
            raise ValueError(f"noise_sigma must be > 0, got {self.noise_sigma}")
        for groups in (self.merged_1, self.merged_2):
            for g in groups:
                for cls in g:
                    if not 0 <= cls < self.num_classes:
                        raise ValueError(f"merged group references unknown class {cls}")


def _class_means(spec: SyntheticSpec, dim: int, merged: list[list[int]],
                 stream: RandomSource) -> np.ndarray:
    """One mean per class; merged groups collapse onto a shared mean."""
    group_of = {}
    for gi, g in enumerate(merged):
        for cls in g:
            group_of[cls] = gi
    gen = stream.generator()
    group_means = gen.normal(0.0, 1.0, size=(len(merged), dim))
    solo_means = gen.normal(0.0, 1.0, size=(spec.num_classes, dim))
    means = np.empty((spec.num_classes, dim))
    for cls in range(spec.num_classes):
        means[cls] = group_means[group_of[cls]] if cls in group_of else solo_means[cls]
    return means


def synthesize_pair(spec: SyntheticSpec) -> tuple[EmbeddingDataset, EmbeddingDataset]:
    spec.validate()
    root = RandomSource(spec.seed, "synth")
    means1 = _class_means(spec, spec.dim1, spec.merged_1, root.child("means1"))
    means2 = _class_means(spec, spec.dim2, spec.merged_2, root.child("means2"))
    noise1 = root.child("noise1").generator()
    noise2 = root.child("noise2").generator()
    label_names = [f"c{i}" for i in range(spec.num_classes)]
    recs1, recs2 = [], []
    for cls in range(spec.num_classes):
        for j in range(spec.samples_per_class):
            sid = f"s{cls:02d}_{j:04d}"
            v1 = means1[cls] + noise1.normal(0.0, spec.noise_sigma, spec.dim1)
            v2 = means2[cls] + noise2.normal(0.0, spec.noise_sigma, spec.dim2)
            recs1.append(EmbeddingRecord(sid, cls, v1.astype(np.float32)))
            recs2.append(EmbeddingRecord(sid, cls, v2.astype(np.float32)))
    ds1 = EmbeddingDataset("synthetic", "modality1", spec.dim1, label_names, recs1)
    ds2 = EmbeddingDataset("synthetic", "modality2", spec.dim2, label_names, recs2)
    return ds1, ds2


def nearest_mean_accuracy(x: np.ndarray, y: np.ndarray) -> float:
    """Held-out nearest-class-mean accuracy; a quick separability probe.

    Class means are fit on the even-indexed samples of each class and scored
    on the odd-indexed ones, so the probe cannot memorize noise directions.
    """
    classes = np.unique(y)
    fit_mask = np.zeros(len(y), dtype=bool)
    for c in classes:
        idx = np.flatnonzero(y == c)
        fit_mask[idx[::2]] = True
    if fit_mask.all() or not fit_mask.any():
        fit_mask[:] = True  # degenerate sizes: fall back to leave-means-in
    means = np.stack([x[(y == c) & fit_mask].mean(axis=0) for c in classes])
    eval_mask = ~fit_mask if (~fit_mask).any() else fit_mask
    d = ((x[eval_mask][:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    pred = classes[d.argmin(axis=1)]
    return float((pred == y[eval_mask]).mean())
