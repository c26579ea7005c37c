"""Neural building blocks: conv/pool/dense/dropout/attention and Adam.

Layers own their parameters and build graph nodes when called. Weight
initialization draws from labeled random streams so a model is fully
determined by its seed.
"""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from . import tensor as T
from .rng import RandomSource
from .tensor import Parameter, Tensor


def _kaiming_uniform(rng: RandomSource, shape: tuple, fan_in: int) -> np.ndarray:
    limit = math.sqrt(6.0 / fan_in)
    return rng.generator().uniform(-limit, limit, size=shape)


def _xavier_uniform(rng: RandomSource, shape: tuple, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.generator().uniform(-limit, limit, size=shape)


class Conv1D:
    """Same-padded stride-1 1-d convolution over (B, L, Cin) inputs."""

    def __init__(self, in_channels: int, filters: int, kernel_size: int, rng: RandomSource, name: str):
        if filters < 1:
            raise ValueError(f"filters must be >= 1, got {filters}")
        if kernel_size % 2 != 1:
            raise ValueError(f"kernel_size must be odd, got {kernel_size}")
        fan_in = kernel_size * in_channels
        self.w = Parameter(
            _kaiming_uniform(rng.child("w"), (kernel_size, in_channels, filters), fan_in),
            f"{name}.w",
        )
        self.b = Parameter(np.zeros(filters), f"{name}.b")

    @property
    def parameters(self) -> list[Parameter]:
        return [self.w, self.b]

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv1d(x, self.w, self.b)


class MaxPool1D:
    def __init__(self, window: int = 2):
        self.window = window

    parameters: list[Parameter] = []

    def __call__(self, x: Tensor) -> Tensor:
        return T.maxpool1d(x, self.window)


class Dense:
    """Affine map with optional ReLU."""

    def __init__(self, in_dim: int, units: int, rng: RandomSource, name: str, activation: str | None = None):
        if units < 1:
            raise ValueError(f"units must be >= 1, got {units}")
        if activation not in (None, "relu"):
            raise ValueError(f"unsupported activation {activation!r}")
        self.activation = activation
        if activation == "relu":
            w = _kaiming_uniform(rng.child("w"), (in_dim, units), in_dim)
        else:
            w = _xavier_uniform(rng.child("w"), (in_dim, units), in_dim, units)
        self.w = Parameter(w, f"{name}.w")
        self.b = Parameter(np.zeros(units), f"{name}.b")

    @property
    def parameters(self) -> list[Parameter]:
        return [self.w, self.b]

    def __call__(self, x: Tensor) -> Tensor:
        out = T.add(T.matmul(x, self.w), self.b)
        return T.relu(out) if self.activation == "relu" else out


class Dropout:
    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate

    parameters: list[Parameter] = []

    def __call__(self, x: Tensor, mode: str, rng: np.random.Generator | None = None) -> Tensor:
        return T.dropout(x, self.rate, mode, rng)


class MultiHeadAttention:
    """Self-attention over (B, T, D) token sequences, heads concatenated."""

    def __init__(self, heads: int, model_dim: int, rng: RandomSource, name: str):
        if heads < 1:
            raise ValueError(f"heads must be >= 1, got {heads}")
        if model_dim % heads != 0:
            raise ValueError(f"model_dim {model_dim} not divisible by heads {heads}")
        self.heads = heads
        self.model_dim = model_dim
        self.head_dim = model_dim // heads
        self.proj = {}
        for key in ("q", "k", "v", "o"):
            self.proj[key] = (
                Parameter(
                    _xavier_uniform(rng.child(key), (model_dim, model_dim), model_dim, model_dim),
                    f"{name}.{key}.w",
                ),
                Parameter(np.zeros(model_dim), f"{name}.{key}.b"),
            )

    @property
    def parameters(self) -> list[Parameter]:
        return [p for pair in self.proj.values() for p in pair]

    def _project(self, x: Tensor, key: str) -> Tensor:
        w, b = self.proj[key]
        B, tokens, D = x.shape
        flat = T.reshape(x, (B * tokens, D))
        return T.reshape(T.add(T.matmul(flat, w), b), (B, tokens, D))

    def __call__(self, x: Tensor, return_weights: bool = False):
        B, tokens, D = x.shape
        if D != self.model_dim:
            raise T.ShapeError(f"attention expects model dim {self.model_dim}, got {x.shape}")
        q = self._project(x, "q")
        k = self._project(x, "k")
        v = self._project(x, "v")

        def split(t: Tensor) -> Tensor:
            # (B, T, D) -> (B*H, T, dh)
            t = T.reshape(t, (B, tokens, self.heads, self.head_dim))
            t = T.swapaxes(t, 1, 2)
            return T.reshape(t, (B * self.heads, tokens, self.head_dim))

        qh, kh, vh = split(q), split(k), split(v)
        scores = T.scale(T.matmul(qh, T.swapaxes(kh, 1, 2)), 1.0 / math.sqrt(self.head_dim))
        weights = T.softmax_rows(scores)
        ctx = T.matmul(weights, vh)
        ctx = T.reshape(ctx, (B, self.heads, tokens, self.head_dim))
        ctx = T.swapaxes(ctx, 1, 2)
        merged = T.reshape(ctx, (B * tokens, D))
        wo, bo = self.proj["o"]
        out = T.reshape(T.add(T.matmul(merged, wo), bo), (B, tokens, D))
        if return_weights:
            return out, weights.data.reshape(B, self.heads, tokens, tokens)
        return out


@dataclass
class AdamState:
    step_count: int = 0


class Adam:
    """Bias-corrected Adam over an explicit parameter list."""

    def __init__(self, params: list[Parameter], learning_rate: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, epsilon_hat: float = 1e-8):
        self.params = params
        self.lr = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = epsilon_hat
        self.m = [np.zeros_like(p.data, dtype=np.float64) for p in params]
        self.v = [np.zeros_like(p.data, dtype=np.float64) for p in params]
        self.state = AdamState()

    def step(self) -> None:
        self.state.step_count += 1
        t = self.state.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad.astype(np.float64)
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data -= update.astype(p.data.dtype)

    def zero_grads(self) -> None:
        T.zero_grads(self.params)
