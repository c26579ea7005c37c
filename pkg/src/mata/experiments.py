"""Experiment orchestration shared by the HTTP service and the CLI."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .data import (
    DataError,
    EmbeddingDataset,
    SyntheticSpec,
    align_pair,
    nearest_mean_accuracy,
    read_dataset,
    stratified_fold_ids,
    synthesize_pair,
    write_dataset,
)
from .harness import (
    REGIME_BY_VARIANT,
    ExperimentData,
    TrainConfig,
    emit_report,
    run_experiment,
)
from .models import ModelSpec, VARIANTS, save_checkpoint
from .ot import SinkhornConfig


class ConfigError(ValueError):
    """An experiment configuration is invalid or incomplete."""


def _train_config(doc: dict, seed: int) -> TrainConfig:
    cfg = TrainConfig(
        epochs=doc.get("epochs", 50),
        learning_rate=doc.get("learningRate", 1e-3),
        batch_size=doc.get("batchSize", 32),
        early_stop_patience=doc.get("earlyStopPatience", 8),
        validation_fraction=doc.get("validationFraction", 0.15),
        dropout_rate=doc.get("dropoutRate", 0.3),
        seed=seed,
    )
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def _sinkhorn_config(doc: dict) -> SinkhornConfig:
    cfg = SinkhornConfig(
        epsilon=doc.get("epsilon", 0.1),
        max_iterations=doc.get("maxIterations", 100),
        tolerance=doc.get("tolerance", 1e-6),
        log_domain=doc.get("logDomain", True),
    )
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def _load_sources(paths: list[str]) -> list[EmbeddingDataset]:
    from .data import _paths

    for p in paths:
        manifest, emb = _paths(p)
        if not manifest.exists() or not emb.exists():
            raise ConfigError(f"referenced dataset does not exist: {p}")
    return [read_dataset(p) for p in paths]


def _single_run_inputs(variant: str, datasets: list[EmbeddingDataset],
                       sinkhorn: SinkhornConfig, source_index: int = 0):
    """Spec + data + display name for one variant over the loaded sources."""
    if variant == "individual":
        ds = datasets[source_index]
        data = ExperimentData.from_dataset(ds)
        spec = ModelSpec(variant, (ds.dim,), len(ds.label_names), sinkhorn)
        name = f"individual_{ds.model_name}"
    else:
        if len(datasets) != 2:
            raise ConfigError(f"variant {variant!r} needs exactly 2 sources")
        pair = align_pair(datasets[0], datasets[1])
        data = ExperimentData.from_pair(pair)
        spec = ModelSpec(
            variant,
            (datasets[0].dim, datasets[1].dim),
            len(pair.label_names),
            sinkhorn,
        )
        name = f"{variant}_{datasets[0].model_name}+{datasets[1].model_name}"
    return spec, data, name


def _fold_signature(folds: list[list[str]]) -> str:
    payload = json.dumps(folds, sort_keys=True).encode("utf-8")
    return hashlib.sha256(payload).hexdigest()


def execute_run(config: dict) -> dict:
    """Run one variant end to end and write the report files."""
    variant = config.get("variant")
    if variant not in VARIANTS:
        raise ConfigError(f"variant must be one of {VARIANTS}, got {variant!r}")
    sources = config.get("sources") or []
    need = 1 if variant == "individual" else 2
    if len(sources) != need:
        raise ConfigError(f"variant {variant!r} needs {need} source(s), got {len(sources)}")
    out_dir = config.get("outputDir")
    if not out_dir:
        raise ConfigError("outputDir is required")
    seed = int(config.get("seed", 0))
    sinkhorn = _sinkhorn_config(config.get("sinkhorn", {}))
    train_cfg = _train_config(config.get("train", {}), seed)
    k = int(config.get("folds", 5))

    datasets = _load_sources(sources)
    spec, data, name = _single_run_inputs(variant, datasets, sinkhorn)
    folds = stratified_fold_ids(data.sample_ids, data.labels, k, seed)
    result = run_experiment(spec, data, train_cfg, folds, name,
                            REGIME_BY_VARIANT[variant], keep_models=True)
    doc = emit_report([result], out_dir)
    for f in result.folds:
        model = getattr(f, "model", None)
        if model is not None:
            save_checkpoint(model, Path(out_dir) / f"checkpoint_{name}_fold{f.fold}.bin",
                            seed=seed)
    (Path(out_dir) / "timing.txt").write_text(
        f"{name}: {result.wall_clock_seconds:.2f}s\n", encoding="utf-8"
    )
    return {"report": doc, "outputDir": str(out_dir),
            "wallClockSeconds": result.wall_clock_seconds,
            "foldSignature": _fold_signature(folds)}


def execute_compare(config: dict) -> dict:
    """Run several variants on identical folds and emit one grouped report."""
    variants = config.get("variants") or []
    if not variants:
        raise ConfigError("variants list is empty")
    for v in variants:
        if v not in VARIANTS:
            raise ConfigError(f"unknown variant {v!r}")
    sources = config.get("sources") or []
    if len(sources) != 2:
        raise ConfigError(f"compare needs exactly 2 sources, got {len(sources)}")
    out_dir = config.get("outputDir")
    if not out_dir:
        raise ConfigError("outputDir is required")
    seed = int(config.get("seed", 0))
    sinkhorn = _sinkhorn_config(config.get("sinkhorn", {}))
    train_cfg = _train_config(config.get("train", {}), seed)
    k = int(config.get("folds", 5))

    datasets = _load_sources(sources)
    pair = align_pair(datasets[0], datasets[1])
    # every variant, including the individual baselines, sees exactly the
    # aligned sample set so the folds are shared
    folds = stratified_fold_ids(pair.sample_ids, pair.labels, k, seed)
    signature = _fold_signature(folds)

    results = []
    signatures = []
    for variant in variants:
        run_specs = []
        if variant == "individual":
            for side in range(2):
                ds = datasets[side]
                keep = set(pair.sample_ids)
                restricted = EmbeddingDataset(
                    ds.dataset_name, ds.model_name, ds.dim, list(ds.label_names),
                    [r for r in ds.records if r.sample_id in keep],
                )
                data = ExperimentData.from_dataset(restricted)
                spec = ModelSpec(variant, (ds.dim,), len(ds.label_names), sinkhorn)
                run_specs.append((spec, data, f"individual_{ds.model_name}"))
        else:
            run_specs.append(
                _single_run_inputs(variant, datasets, sinkhorn)
            )
        for spec, data, name in run_specs:
            assert _fold_signature(
                stratified_fold_ids(data.sample_ids, data.labels, k, seed)
            ) == signature, "fold assignment diverged between variants"
            signatures.append(signature)
            results.append(
                run_experiment(spec, data, train_cfg, folds, name,
                               REGIME_BY_VARIANT[spec.variant])
            )
    doc = emit_report(results, out_dir)
    return {"report": doc, "outputDir": str(out_dir), "foldSignature": signature,
            "wallClockSeconds": sum(r.wall_clock_seconds for r in results)}


def execute_synth(config: dict) -> dict:
    """Write a synthetic complementary pair and report separability baselines."""
    try:
        spec = SyntheticSpec(
            num_classes=int(config.get("classes", 4)),
            samples_per_class=int(config.get("perClass", 100)),
            dim1=int(config.get("dim1", 64)),
            dim2=int(config.get("dim2", 64)),
            noise_sigma=float(config.get("sigma", 1.0)),
            seed=int(config.get("seed", 7)),
        )
        # the stock merged groups assume 4 classes; other class counts
        # start unmerged unless groups are given explicitly
        if config.get("merged1") is not None:
            spec.merged_1 = [list(map(int, g)) for g in config["merged1"]]
        elif spec.num_classes != 4:
            spec.merged_1 = []
        if config.get("merged2") is not None:
            spec.merged_2 = [list(map(int, g)) for g in config["merged2"]]
        elif spec.num_classes != 4:
            spec.merged_2 = []
        spec.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out_dir = config.get("outputDir")
    if not out_dir:
        raise ConfigError("outputDir is required")
    ds1, ds2 = synthesize_pair(spec)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(ds1, out / "modality1")
    write_dataset(ds2, out / "modality2")
    y = ds1.labels()
    x1, x2 = ds1.matrix(), ds2.matrix()
    baselines = {
        "modality1": nearest_mean_accuracy(x1, y),
        "modality2": nearest_mean_accuracy(x2, y),
        "joint": nearest_mean_accuracy(np.concatenate([x1, x2], axis=1), y),
    }
    return {
        "files": [
            str(out / "modality1.manifest.json"), str(out / "modality1.emb"),
            str(out / "modality2.manifest.json"), str(out / "modality2.emb"),
        ],
        "records": len(ds1.records),
        "baselineAccuracies": baselines,
    }


def execute_inspect(path: str) -> dict:
    """Validate a dataset on disk and summarize it; violations are collected."""
    violations: list[str] = []
    summary: dict = {"path": str(path)}
    try:
        ds = read_dataset(path)
    except DataError as exc:
        violations.append(str(exc))
        return {"path": str(path), "valid": False, "violations": violations}
    hist = {name: 0 for name in ds.label_names}
    for r in ds.records:
        hist[ds.label_names[r.label_index]] += 1
    from .data import _paths  # stem resolution shared with the reader

    _, emb_path = _paths(path)
    checksum = hashlib.sha256(emb_path.read_bytes()).hexdigest()
    summary.update(
        valid=True,
        violations=violations,
        datasetName=ds.dataset_name,
        modelName=ds.model_name,
        dim=ds.dim,
        records=len(ds.records),
        labelNames=ds.label_names,
        classHistogram=hist,
        embSha256=checksum,
    )
    return summary
