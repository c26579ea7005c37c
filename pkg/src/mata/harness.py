"""Training loop, metrics, 5-fold experiment runner, and report emission."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
import json
import os
from pathlib import Path
import time

import numpy as np

from .data import AlignedPair, DataError, EmbeddingDataset
from .layers import Adam
from .models import Model, ModelSpec
from .rng import RandomSource
from .tensor import cross_entropy


class TrainingError(RuntimeError):
    """Training diverged (non-finite loss) or was otherwise unrunnable."""


@dataclass
class TrainConfig:
    epochs: int = 50
    learning_rate: float = 1e-3
    batch_size: int = 32
    early_stop_patience: int | None = 8  # None disables early stopping
    validation_fraction: float = 0.15
    dropout_rate: float = 0.3
    seed: int = 0

    def validate(self) -> None:
        if not 0 < self.validation_fraction < 0.5:
            raise ValueError(
                f"validation_fraction must be in (0, 0.5), got {self.validation_fraction}"
            )
        if self.early_stop_patience is not None and self.early_stop_patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.early_stop_patience}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")


@dataclass
class Metrics:
    accuracy: float
    macro_f1: float
    per_class_f1: list[float]
    confusion: np.ndarray  # (C, C) ints, rows = true class


@dataclass
class ExperimentData:
    """Uniform in-memory view over one dataset or an aligned pair."""

    sample_ids: list[str]
    labels: np.ndarray
    x1: np.ndarray
    x2: np.ndarray | None
    label_names: list[str]

    @classmethod
    def from_dataset(cls, ds: EmbeddingDataset) -> "ExperimentData":
        return cls(
            sample_ids=[r.sample_id for r in ds.records],
            labels=ds.labels(),
            x1=ds.matrix(),
            x2=None,
            label_names=list(ds.label_names),
        )

    @classmethod
    def from_pair(cls, pair: AlignedPair) -> "ExperimentData":
        return cls(
            sample_ids=list(pair.sample_ids),
            labels=pair.labels,
            x1=pair.x1,
            x2=pair.x2,
            label_names=list(pair.label_names),
        )

    @property
    def num_classes(self) -> int:
        return len(self.label_names)

    def rows(self, ids: list[str]) -> tuple[np.ndarray, np.ndarray | None, np.ndarray]:
        index = {sid: i for i, sid in enumerate(self.sample_ids)}
        try:
            idx = np.array([index[sid] for sid in ids], dtype=np.int64)
        except KeyError as exc:
            raise DataError(f"unknown sample id {exc.args[0]!r}") from exc
        x2 = self.x2[idx] if self.x2 is not None else None
        return self.x1[idx], x2, self.labels[idx]


def compute_metrics(y_true, y_pred, num_classes: int) -> Metrics:
    """Accuracy, per-class F1 (0/0 -> 0), and macro-F1 over all classes."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"length mismatch: {y_true.shape} vs {y_pred.shape}")
    if y_true.size and (
        min(y_true.min(), y_pred.min()) < 0
        or max(y_true.max(), y_pred.max()) >= num_classes
    ):
        raise ValueError(f"labels out of range [0, {num_classes})")
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(confusion, (y_true, y_pred), 1)
    diag = np.diag(confusion).astype(np.float64)
    pred_tot = confusion.sum(axis=0).astype(np.float64)
    true_tot = confusion.sum(axis=1).astype(np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(pred_tot > 0, diag / pred_tot, 0.0)
        recall = np.where(true_tot > 0, diag / true_tot, 0.0)
        pr = precision + recall
        f1 = np.where(pr > 0, 2 * precision * recall / pr, 0.0)
    accuracy = float(diag.sum() / max(1, y_true.size))
    return Metrics(
        accuracy=accuracy,
        macro_f1=float(f1.mean()),
        per_class_f1=[float(v) for v in f1],
        confusion=confusion,
    )


def _stratified_split(ids: list[str], labels: np.ndarray, fraction: float,
                      rng: RandomSource) -> tuple[list[str], list[str]]:
    """Carve a validation subset preserving class proportions."""
    train, val = [], []
    ids = np.array(ids)
    for cls in np.unique(labels):
        mask = labels == cls
        cls_ids = ids[mask]
        gen = rng.child(f"class{cls}").generator()
        order = cls_ids[gen.permutation(len(cls_ids))]
        n_val = max(1, int(round(fraction * len(order)))) if len(order) > 1 else 0
        val.extend(str(s) for s in order[:n_val])
        train.extend(str(s) for s in order[n_val:])
    return train, val


def _batches(n: int, batch_size: int, perm: np.ndarray | None = None):
    order = perm if perm is not None else np.arange(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def _batch_input(x1, x2, idx):
    return (x1[idx], x2[idx]) if x2 is not None else x1[idx]


def _eval_order(n: int) -> np.ndarray:
    """Fixed shuffle applied before eval batching.

    Transport couples samples within a batch, and fold id lists are grouped
    by class; evaluating in that order would feed near-single-class batches
    to a model trained on mixed ones. A seeded permutation restores mixed
    batch composition without sacrificing determinism.
    """
    return RandomSource(0, f"eval-mix/{n}").generator().permutation(n)


def _eval_loss(model: Model, x1, x2, y, batch_size: int) -> float:
    total, count = 0.0, 0
    order = _eval_order(len(y))
    for idx in _batches(len(y), batch_size, order):
        logits = model.forward(_batch_input(x1, x2, idx), mode="eval")
        total += float(cross_entropy(logits, y[idx]).data) * len(idx)
        count += len(idx)
    return total / max(1, count)


def predict(model: Model, x1, x2, batch_size: int = 32) -> np.ndarray:
    n = len(x1)
    preds = np.zeros(n, dtype=np.int64)
    for idx in _batches(n, batch_size, _eval_order(n)):
        logits = model.forward(_batch_input(x1, x2, idx), mode="eval")
        preds[idx] = logits.data.argmax(axis=1)
    return preds


def train_fold(spec: ModelSpec, data: ExperimentData, train_ids: list[str],
               cfg: TrainConfig, fold_label: str = "fold0") -> tuple[Model, list[dict]]:
    """Train one model on a fold's training ids; returns model and curves.

    A stratified validation subset is carved from the training ids; early
    stopping monitors validation loss and restores the best parameters.
    """
    cfg.validate()
    if not train_ids:
        raise TrainingError("empty training set")
    spec = replace(spec, dropout_rate=cfg.dropout_rate)
    x1_all, x2_all, y_all = data.rows(train_ids)
    split_rng = RandomSource(cfg.seed, f"{fold_label}/valsplit")
    tr_ids, val_ids = _stratified_split(train_ids, y_all, cfg.validation_fraction, split_rng)
    x1_tr, x2_tr, y_tr = data.rows(tr_ids)
    x1_val, x2_val, y_val = data.rows(val_ids)

    model = Model(spec, RandomSource(cfg.seed, f"{fold_label}/init/{spec.variant}"))
    optimizer = Adam(model.parameters, learning_rate=cfg.learning_rate)
    dropout_gen = RandomSource(cfg.seed, f"{fold_label}/dropout").generator()
    shuffle_gen = RandomSource(cfg.seed, f"{fold_label}/shuffle").generator()

    best_val = np.inf
    best_state: list[np.ndarray] | None = None
    stale = 0
    curves: list[dict] = []
    for epoch in range(1, cfg.epochs + 1):
        perm = shuffle_gen.permutation(len(y_tr))
        losses = []
        for idx in _batches(len(y_tr), cfg.batch_size, perm):
            logits = model.forward(
                _batch_input(x1_tr, x2_tr, idx), mode="train", dropout_rng=dropout_gen
            )
            loss = cross_entropy(logits, y_tr[idx])
            if not np.isfinite(loss.data):
                raise TrainingError(f"non-finite training loss at epoch {epoch}")
            optimizer.zero_grads()
            loss.backward()
            optimizer.step()
            losses.append(float(loss.data))
        train_loss = float(np.mean(losses))
        val_loss = _eval_loss(model, x1_val, x2_val, y_val, cfg.batch_size) if len(y_val) else train_loss
        if not np.isfinite(val_loss):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        curves.append({"epoch": epoch, "trainLoss": train_loss, "valLoss": val_loss})
        if val_loss < best_val:
            best_val = val_loss
            best_state = [p.data.copy() for p in model.parameters]
            stale = 0
        else:
            stale += 1
        if cfg.early_stop_patience is not None and stale >= cfg.early_stop_patience:
            break
    # patience None disables early stopping entirely: keep the final weights
    if cfg.early_stop_patience is not None and best_state is not None:
        model.load_state_arrays(best_state)
    return model, curves


@dataclass
class FoldResult:
    fold: int
    metrics: Metrics
    curves: list[dict]


@dataclass
class RunResult:
    name: str
    regime: str
    spec: ModelSpec
    config: TrainConfig
    folds: list[FoldResult]
    wall_clock_seconds: float = 0.0
    checkpoints: list = field(default_factory=list)  # (fold, Model) pairs if kept

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean([f.metrics.accuracy for f in self.folds]))

    @property
    def mean_macro_f1(self) -> float:
        return float(np.mean([f.metrics.macro_f1 for f in self.folds]))

    def to_doc(self) -> dict:
        """Deterministic JSON-serializable summary (no wall clock)."""
        return {
            "name": self.name,
            "regime": self.regime,
            "spec": json.loads(self.spec.to_json()),
            "config": {
                "epochs": self.config.epochs,
                "learningRate": self.config.learning_rate,
                "batchSize": self.config.batch_size,
                "earlyStopPatience": self.config.early_stop_patience,
                "validationFraction": self.config.validation_fraction,
                "dropoutRate": self.config.dropout_rate,
                "seed": self.config.seed,
            },
            "folds": [
                {
                    "fold": f.fold,
                    "accuracy": f.metrics.accuracy,
                    "macroF1": f.metrics.macro_f1,
                    "perClassF1": f.metrics.per_class_f1,
                    "confusion": f.metrics.confusion.tolist(),
                }
                for f in self.folds
            ],
            "meanAccuracy": self.mean_accuracy,
            "meanMacroF1": self.mean_macro_f1,
        }


def worker_count() -> int:
    raw = os.environ.get("MATA_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def run_experiment(spec: ModelSpec, data: ExperimentData, cfg: TrainConfig,
                   folds: list[list[str]], name: str, regime: str,
                   keep_models: bool = False) -> RunResult:
    """Train/test on each fold; test folds never overlap their training ids."""
    cfg.validate()
    all_ids = set(data.sample_ids)
    flat = [sid for fold in folds for sid in fold]
    if len(flat) != len(set(flat)) or set(flat) != all_ids:
        raise DataError("folds do not partition the dataset")
    started = time.monotonic()

    def one_fold(i: int) -> FoldResult:
        test_ids = folds[i]
        test_set = set(test_ids)
        train_ids = [sid for sid in data.sample_ids if sid not in test_set]
        try:
            model, curves = train_fold(spec, data, train_ids, cfg, fold_label=f"fold{i}")
            x1, x2, y = data.rows(test_ids)
            y_pred = predict(model, x1, x2, cfg.batch_size)
            metrics = compute_metrics(y, y_pred, data.num_classes)
        except Exception as exc:
            raise TrainingError(f"fold {i}: {exc}") from exc
        result = FoldResult(fold=i, metrics=metrics, curves=curves)
        if keep_models:
            result.model = model  # type: ignore[attr-defined]
        return result

    workers = worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one_fold, range(len(folds))))
    else:
        results = [one_fold(i) for i in range(len(folds))]
    return RunResult(
        name=name,
        regime=regime,
        spec=spec,
        config=cfg,
        folds=results,
        wall_clock_seconds=time.monotonic() - started,
    )


REGIME_ORDER = [
    "Individual Representations",
    "Fusion with Concatenation",
    "Fusion with OT",
    "Fusion with MATA",
]

REGIME_BY_VARIANT = {
    "individual": "Individual Representations",
    "concat": "Fusion with Concatenation",
    "ot": "Fusion with OT",
    "mata": "Fusion with MATA",
}


def _pct(v: float) -> str:
    return f"{100.0 * v:.2f}"


def render_text_table(results: list[RunResult]) -> str:
    lines = [f"{'Features':<24}{'Accuracy':>10}{'F1-Score':>10}"]
    for regime in REGIME_ORDER:
        group = [r for r in results if r.regime == regime]
        if not group:
            continue
        lines.append(f"-- {regime} --")
        for r in group:
            lines.append(
                f"{r.name:<24}{_pct(r.mean_accuracy):>10}{_pct(r.mean_macro_f1):>10}"
            )
    return "\n".join(lines) + "\n"


def render_csv(results: list[RunResult]) -> str:
    if not results:
        raise ValueError("no results to report")
    k = len(results[0].folds)
    header = ["run", "regime", "accuracy", "f1"]
    for i in range(k):
        header += [f"fold{i}_accuracy", f"fold{i}_f1"]
    rows = [",".join(header)]
    for r in results:
        cells = [r.name, r.regime, _pct(r.mean_accuracy), _pct(r.mean_macro_f1)]
        for f in r.folds:
            cells += [_pct(f.metrics.accuracy), _pct(f.metrics.macro_f1)]
        rows.append(",".join(cells))
    return "\n".join(rows) + "\n"


def emit_report(results: list[RunResult], out_dir) -> dict:
    """Write report.{txt,csv,json} plus per-run confusion and curve CSVs."""
    if not results:
        raise ValueError("no results to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(render_text_table(results), encoding="utf-8")
    (out / "report.csv").write_text(render_csv(results), encoding="utf-8")
    doc = {"runs": [r.to_doc() for r in results]}
    (out / "report.json").write_text(
        json.dumps(doc, sort_keys=True, indent=1), encoding="utf-8"
    )
    for r in results:
        combined = np.sum([f.metrics.confusion for f in r.folds], axis=0)
        conf_lines = [",".join(str(int(v)) for v in row) for row in combined]
        (out / f"confusion_{r.name}.csv").write_text(
            "\n".join(conf_lines) + "\n", encoding="utf-8"
        )
        curve_lines = ["fold,epoch,trainLoss,valLoss"]
        for f in r.folds:
            for c in f.curves:
                curve_lines.append(
                    f"{f.fold},{c['epoch']},{c['trainLoss']!r},{c['valLoss']!r}"
                )
        (out / f"curves_{r.name}.csv").write_text(
            "\n".join(curve_lines) + "\n", encoding="utf-8"
        )
    return doc
