"""The four classifier architectures over embedding inputs.

``individual`` is a two-block CNN probe on one embedding source. The three
fusion variants share a pair of lighter CNN branches projecting each source
to 120 dimensions; ``concat`` joins the branch features directly, ``ot``
aligns them with a transport plan first, and ``mata`` additionally runs
self-attention over the fused feature segments before the classifier head.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import json
import struct

import numpy as np

from . import tensor as T
from .layers import Conv1D, Dense, Dropout, MaxPool1D, MultiHeadAttention
from .ot import SinkhornConfig, cost_matrix, sinkhorn, transport, transport_reverse
from .rng import RandomSource
from .tensor import Parameter, Tensor

VARIANTS = ("individual", "concat", "ot", "mata")
PROJECTION_DIM = 120
ATTENTION_HEADS = 8


@dataclass
class ModelSpec:
    variant: str
    dims: tuple  # (dim,) for individual, (dim1, dim2) for fusion variants
    num_classes: int
    sinkhorn: SinkhornConfig = field(default_factory=SinkhornConfig)
    dropout_rate: float = 0.3

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        expected = 1 if self.variant == "individual" else 2
        if len(self.dims) != expected:
            raise ValueError(
                f"variant {self.variant!r} needs {expected} input dims, got {self.dims}"
            )
        if any(d < 4 for d in self.dims):
            raise ValueError(f"input dims too small: {self.dims}")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        self.sinkhorn.validate()

    def to_json(self) -> str:
        return json.dumps(
            {
                "variant": self.variant,
                "dims": list(self.dims),
                "numClasses": self.num_classes,
                "sinkhorn": {
                    "epsilon": self.sinkhorn.epsilon,
                    "maxIterations": self.sinkhorn.max_iterations,
                    "tolerance": self.sinkhorn.tolerance,
                    "logDomain": self.sinkhorn.log_domain,
                },
                "dropoutRate": self.dropout_rate,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "ModelSpec":
        doc = json.loads(text)
        sk = doc.get("sinkhorn", {})
        spec = cls(
            variant=doc["variant"],
            dims=tuple(doc["dims"]),
            num_classes=doc["numClasses"],
            sinkhorn=SinkhornConfig(
                epsilon=sk.get("epsilon", 0.1),
                max_iterations=sk.get("maxIterations", 100),
                tolerance=sk.get("tolerance", 1e-6),
                log_domain=sk.get("logDomain", True),
            ),
            dropout_rate=doc.get("dropoutRate", 0.3),
        )
        spec.validate()
        return spec


class _ConvBranch:
    """Two conv/pool blocks plus an optional flat projection."""

    def __init__(self, input_dim: int, filters: tuple, rng: RandomSource, name: str,
                 projection: int | None):
        f1, f2 = filters
        self.input_dim = input_dim
        self.conv1 = Conv1D(1, f1, 3, rng.child("conv1"), f"{name}.conv1")
        self.pool = MaxPool1D(2)
        self.conv2 = Conv1D(f1, f2, 3, rng.child("conv2"), f"{name}.conv2")
        self.flat_dim = (input_dim // 2 // 2) * f2
        self.proj = (
            Dense(self.flat_dim, projection, rng.child("proj"), f"{name}.proj")
            if projection is not None
            else None
        )

    @property
    def parameters(self) -> list[Parameter]:
        params = self.conv1.parameters + self.conv2.parameters
        if self.proj is not None:
            params += self.proj.parameters
        return params

    def __call__(self, x: Tensor) -> Tensor:
        B = x.shape[0]
        h = T.reshape(x, (B, self.input_dim, 1))
        h = self.pool(T.relu(self.conv1(h)))
        h = self.pool(T.relu(self.conv2(h)))
        h = T.reshape(h, (B, self.flat_dim))
        return self.proj(h) if self.proj is not None else h


class _Head:
    """Dense(128, relu) -> dropout -> Dense(num_classes)."""

    def __init__(self, in_dim: int, num_classes: int, dropout_rate: float,
                 rng: RandomSource, name: str):
        self.hidden = Dense(in_dim, 128, rng.child("hidden"), f"{name}.hidden", activation="relu")
        self.dropout = Dropout(dropout_rate)
        self.out = Dense(128, num_classes, rng.child("out"), f"{name}.out")

    @property
    def parameters(self) -> list[Parameter]:
        return self.hidden.parameters + self.out.parameters

    def __call__(self, x: Tensor, mode: str, rng) -> Tensor:
        return self.out(self.dropout(self.hidden(x), mode, rng))


def _stack_tokens(segments: list[Tensor]) -> Tensor:
    """View a list of (B, D) features as a (B, n, D) token sequence."""
    B, D = segments[0].shape
    return T.reshape(T.concat_last(segments), (B, len(segments), D))


class Model:
    """A built architecture: ordered parameters plus a forward procedure."""

    def __init__(self, spec: ModelSpec, seed_rng: RandomSource):
        spec.validate()
        self.spec = spec
        if spec.variant == "individual":
            self.branch1 = _ConvBranch(spec.dims[0], (64, 128), seed_rng.child("branch1"),
                                       "branch1", projection=None)
            self.branch2 = None
            self.attention = None
            head_in = self.branch1.flat_dim
        else:
            self.branch1 = _ConvBranch(spec.dims[0], (32, 64), seed_rng.child("branch1"),
                                       "branch1", projection=PROJECTION_DIM)
            self.branch2 = _ConvBranch(spec.dims[1], (32, 64), seed_rng.child("branch2"),
                                       "branch2", projection=PROJECTION_DIM)
            tokens = {"concat": 2, "ot": 6, "mata": 6}[spec.variant]
            if spec.variant in ("concat", "mata"):
                self.attention = MultiHeadAttention(
                    ATTENTION_HEADS, PROJECTION_DIM, seed_rng.child("mha"), "mha"
                )
            else:
                self.attention = None
            head_in = tokens * PROJECTION_DIM
        self.head = _Head(head_in, spec.num_classes, spec.dropout_rate,
                          seed_rng.child("head"), "head")

    @property
    def parameters(self) -> list[Parameter]:
        params = list(self.branch1.parameters)
        if self.branch2 is not None:
            params += self.branch2.parameters
        if self.attention is not None:
            params += self.attention.parameters
        params += self.head.parameters
        return params

    @property
    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.parameters)

    def _fuse(self, x1: Tensor, x2: Tensor, plan_cache: dict | None) -> list[Tensor]:
        if self.spec.variant == "concat":
            return [x1, x2]
        if plan_cache is not None and "plan" in plan_cache:
            plan = plan_cache["plan"]
        else:
            plan = sinkhorn(cost_matrix(x1, x2), self.spec.sinkhorn)
            if plan_cache is not None:
                plan_cache["plan"] = plan
        u12 = transport(plan, x2)
        u21 = transport_reverse(plan, x1)
        # fused1 = (u12, x1) + opposite original x2; fused2 = (u21, x2) + x1
        return [u12, x1, x2, u21, x2, x1]

    def forward(self, batch, mode: str = "eval", dropout_rng=None,
                plan_cache: dict | None = None, return_features: bool = False):
        """Compute logits for one batch.

        ``batch`` is a (B, dim) array for the individual variant, or a
        (x1, x2) pair of index-aligned arrays for fusion variants.
        ``plan_cache`` lets callers pin the transport plan across calls.
        """
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        if self.spec.variant == "individual":
            x = T.as_tensor(batch)
            if x.shape[1] != self.spec.dims[0]:
                raise T.ShapeError(f"expected dim {self.spec.dims[0]}, got {x.shape}")
            pre_head = self.branch1(x)
            tokens = None
        else:
            x1, x2 = batch
            x1, x2 = T.as_tensor(x1), T.as_tensor(x2)
            if x1.shape[0] != x2.shape[0]:
                raise T.ShapeError(f"pair batch sizes differ: {x1.shape} vs {x2.shape}")
            segments = self._fuse(self.branch1(x1), self.branch2(x2), plan_cache)
            if self.attention is not None:
                tokens = _stack_tokens(segments)
                attended = self.attention(tokens)
                B, n, D = attended.shape
                pre_head = T.reshape(attended, (B, n * D))
            else:
                tokens = None
                pre_head = T.concat_last(segments)
        logits = self.head(pre_head, mode, dropout_rng)
        if return_features:
            feats = {"pre_head": pre_head.data}
            if tokens is not None:
                feats["tokens"] = tokens.data
            return logits, feats
        return logits

    def pre_attention_width(self) -> int:
        if self.spec.variant == "individual":
            return self.branch1.flat_dim
        return {"concat": 2, "ot": 6, "mata": 6}[self.spec.variant] * PROJECTION_DIM

    def state_arrays(self) -> list[np.ndarray]:
        return [p.data for p in self.parameters]

    def load_state_arrays(self, arrays: list[np.ndarray]) -> None:
        params = self.parameters
        if len(arrays) != len(params):
            raise ValueError(f"expected {len(params)} arrays, got {len(arrays)}")
        for p, a in zip(params, arrays):
            if a.shape != p.data.shape:
                raise T.ShapeError(f"shape {a.shape} does not fit parameter {p.name} {p.data.shape}")
            p.data[...] = a.astype(p.data.dtype)


def build_model(spec: ModelSpec, seed: int) -> Model:
    return Model(spec, RandomSource(seed, f"model/{spec.variant}"))


_CHECKPOINT_MAGIC = b"MCK1"


def save_checkpoint(model: Model, path, seed: int | None = None) -> None:
    """JSON header plus raw little-endian float32 payloads in parameter order."""
    params = model.parameters
    header = json.dumps(
        {
            "spec": json.loads(model.spec.to_json()),
            "seed": seed,
            "params": [{"name": p.name, "shape": list(p.data.shape)} for p in params],
        },
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for p in params:
            fh.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())


def load_checkpoint(path) -> tuple[Model, dict]:
    with open(path, "rb") as fh:
        if fh.read(4) != _CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        spec = ModelSpec.from_json(json.dumps(header["spec"]))
        model = build_model(spec, header.get("seed") or 0)
        arrays = []
        for meta in header["params"]:
            shape = tuple(meta["shape"])
            n = int(np.prod(shape)) if shape else 1
            buf = fh.read(4 * n)
            if len(buf) != 4 * n:
                raise ValueError(f"{path}: truncated payload for {meta['name']}")
            arrays.append(np.frombuffer(buf, dtype="<f4").reshape(shape).copy())
        model.load_state_arrays(arrays)
    return model, header
