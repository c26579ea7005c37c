"""Dense tensors with reverse-mode differentiation.

A ``Tensor`` wraps a numpy array and remembers how it was produced; calling
``backward()`` on a scalar walks the recorded graph and accumulates gradients
into the ``Parameter`` leaves. The graph is rebuilt on every forward pass and
discarded after backward, so there is no persistent tape state between
batches.

Default precision is float32. Verification code (gradient checking, solver
references) runs under ``precision("float64")``. Every operation asserts its
output is finite unless the guard is switched off with ``set_nan_checks``.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .rng import RandomSource


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class NumericsError(RuntimeError):
    """A non-finite value appeared where the contract forbids one."""


_DEFAULT_DTYPE = np.dtype(np.float32)
_NAN_CHECKS = True


def default_dtype() -> np.dtype:
    return _DEFAULT_DTYPE


def set_nan_checks(enabled: bool) -> bool:
    global _NAN_CHECKS
    previous = _NAN_CHECKS
    _NAN_CHECKS = bool(enabled)
    return previous


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype newly created tensors default to."""
    global _DEFAULT_DTYPE
    previous = _DEFAULT_DTYPE
    _DEFAULT_DTYPE = np.dtype(dtype)
    try:
        yield
    finally:
        _DEFAULT_DTYPE = previous


def _guard(data: np.ndarray, op: str) -> None:
    if _NAN_CHECKS and not np.all(np.isfinite(data)):
        raise NumericsError(f"non-finite values produced by {op}")


class Tensor:
    """Immutable n-d array node in the differentiation graph."""

    __slots__ = ("data", "_parents", "_vjp", "requires_grad", "grad")

    def __init__(self, data, parents: tuple = (), vjp: Callable | None = None):
        if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
            self.data = data
        else:
            self.data = np.asarray(data, dtype=_DEFAULT_DTYPE)
        self._parents = parents
        self._vjp = vjp
        self.requires_grad = any(p.requires_grad for p in parents)
        self.grad = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable Parameter's grad."""
        if self.data.size != 1:
            raise ShapeError(f"backward requires a scalar, got shape {self.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if isinstance(node, Parameter):
                node.grad += g.astype(node.data.dtype, copy=False)
            if node._vjp is None:
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                acc = grads.get(id(parent))
                grads[id(parent)] = pg if acc is None else acc + pg

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(as_tensor(other), -1.0))

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype})"


class Parameter(Tensor):
    """Trainable leaf tensor with a persistent gradient buffer."""

    __slots__ = ("name",)

    def __init__(self, value, name: str):
        super().__init__(np.array(value, dtype=_DEFAULT_DTYPE))
        self.name = name
        self.requires_grad = True
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad.fill(0.0)


def zero_grads(params: Iterable[Parameter]) -> None:
    for p in params:
        p.zero_grad()


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data
    _guard(out, "add")
    return Tensor(
        out,
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data
    _guard(out, "mul")
    return Tensor(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        ),
    )


def scale(a, s: float) -> Tensor:
    a = as_tensor(a)
    out = a.data * a.data.dtype.type(s)
    _guard(out, "scale")
    return Tensor(out, (a,), lambda g: (g * a.data.dtype.type(s),))


def matmul(a, b) -> Tensor:
    """Matrix product; 2-d operands or stacked 3-d with equal batch extents."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} vs {b.shape}")
    if a.data.ndim == 3 and b.data.ndim == 3 and a.data.shape[0] != b.data.shape[0]:
        raise ShapeError(f"matmul batch extents differ: {a.shape} vs {b.shape}")
    out = a.data @ b.data
    _guard(out, "matmul")

    def vjp(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return Tensor(out, (a, b), vjp)


def relu(x) -> Tensor:
    x = as_tensor(x)
    out = np.maximum(x.data, 0)
    return Tensor(out, (x,), lambda g: (g * (x.data > 0),))


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    return Tensor(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.data.shape),))


def swapaxes(x, i: int, j: int) -> Tensor:
    x = as_tensor(x)
    return Tensor(np.swapaxes(x.data, i, j), (x,), lambda g: (np.swapaxes(g, i, j),))


def concat_last(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate along the last axis; gradient splits at recorded offsets."""
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat_last needs at least one part")
    lead = parts[0].data.shape[:-1]
    for p in parts:
        if p.data.shape[:-1] != lead:
            raise ShapeError(
                f"concat_last leading extents differ: {parts[0].shape} vs {p.shape}"
            )
    out = np.concatenate([p.data for p in parts], axis=-1)
    widths = [p.data.shape[-1] for p in parts]
    offsets = np.cumsum([0] + widths)

    def vjp(g):
        return tuple(
            g[..., offsets[i] : offsets[i + 1]] for i in range(len(parts))
        )

    return Tensor(out, tuple(parts), vjp)


def softmax_rows(x) -> Tensor:
    """Softmax along the last axis with per-row max subtraction."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)
    _guard(out, "softmax_rows")

    def vjp(g):
        inner = (g * out).sum(axis=-1, keepdims=True)
        return ((g - inner) * out,)

    return Tensor(out, (x,), vjp)


def sum_all(x) -> Tensor:
    x = as_tensor(x)
    return Tensor(
        np.asarray(x.data.sum(), dtype=x.data.dtype),
        (x,),
        lambda g: (np.broadcast_to(g, x.data.shape).copy(),),
    )


def mean_all(x) -> Tensor:
    x = as_tensor(x)
    n = x.data.size
    return Tensor(
        np.asarray(x.data.mean(), dtype=x.data.dtype),
        (x,),
        lambda g: (np.broadcast_to(g / n, x.data.shape).astype(x.data.dtype),),
    )


def conv1d(x, w, b) -> Tensor:
    """Same-padded stride-1 cross-correlation.

    x: (B, L, Cin); w: (K, Cin, Cout) with K odd; b: (Cout,).
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    B, L, cin = x.data.shape
    K, w_cin, cout = w.data.shape
    if K % 2 != 1:
        raise ShapeError(f"conv1d kernel size must be odd, got {K}")
    if w_cin != cin:
        raise ShapeError(f"conv1d channel mismatch: input {x.shape} vs kernel {w.shape}")
    pad = K // 2
    xp = np.pad(x.data, ((0, 0), (pad, pad), (0, 0)))
    # (B, L, Cin, K) -> (B, L, K, Cin)
    cols = np.lib.stride_tricks.sliding_window_view(xp, K, axis=1)
    cols = np.ascontiguousarray(cols.transpose(0, 1, 3, 2))
    wf = w.data.reshape(K * cin, cout)
    out = cols.reshape(B * L, K * cin) @ wf + b.data
    out = out.reshape(B, L, cout)
    _guard(out, "conv1d")

    def vjp(g):
        gf = g.reshape(B * L, cout)
        gb = gf.sum(axis=0)
        gw = (cols.reshape(B * L, K * cin).T @ gf).reshape(K, cin, cout)
        gcols = (gf @ wf.T).reshape(B, L, K, cin)
        gxp = np.zeros_like(xp)
        for k in range(K):
            gxp[:, k : k + L, :] += gcols[:, :, k, :]
        return gxp[:, pad : pad + L, :], gw, gb

    return Tensor(out, (x, w, b), vjp)


def maxpool1d(x, window: int = 2) -> Tensor:
    """Non-overlapping max pooling; trailing remainder dropped; ties break low."""
    x = as_tensor(x)
    B, L, C = x.data.shape
    if L < window:
        raise ShapeError(f"maxpool1d input length {L} shorter than window {window}")
    L2 = L // window
    blocks = x.data[:, : L2 * window, :].reshape(B, L2, window, C)
    idx = blocks.argmax(axis=2)
    out = np.take_along_axis(blocks, idx[:, :, None, :], axis=2)[:, :, 0, :]

    def vjp(g):
        gblocks = np.zeros_like(blocks)
        np.put_along_axis(gblocks, idx[:, :, None, :], g[:, :, None, :], axis=2)
        gx = np.zeros_like(x.data)
        gx[:, : L2 * window, :] = gblocks.reshape(B, L2 * window, C)
        return (gx,)

    return Tensor(out, (x,), vjp)


def dropout(x, rate: float, mode: str, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout: train mode zeroes and rescales, eval is the identity."""
    x = as_tensor(x)
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if mode == "eval" or rate == 0.0:
        return Tensor(x.data, (x,), lambda g: (g,))
    if mode != "train":
        raise ValueError(f"dropout mode must be 'train' or 'eval', got {mode!r}")
    if rng is None:
        raise ValueError("train-mode dropout requires a random generator")
    keep = (rng.random(x.data.shape) >= rate).astype(x.data.dtype)
    factor = x.data.dtype.type(1.0 / (1.0 - rate))
    mask = keep * factor
    return Tensor(x.data * mask, (x,), lambda g: (g * mask,))


def cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood of integer labels under softmax(logits)."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    B, C = logits.data.shape
    if labels.shape != (B,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch {B}")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= C:
        raise ValueError(f"labels out of range [0, {C})")
    m = logits.data.max(axis=1, keepdims=True)
    z = logits.data - m
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    loss = -logp[np.arange(B), labels].mean()
    _guard(np.asarray(loss), "cross_entropy")

    def vjp(g):
        soft = np.exp(logp)
        soft[np.arange(B), labels] -= 1.0
        return (g * soft / B,)

    return Tensor(np.asarray(loss, dtype=logits.data.dtype), (logits,), vjp)


def gradient_check(
    f: Callable[[], Tensor],
    params: Sequence[Parameter],
    rng: RandomSource | None = None,
    h: float = 1e-5,
    max_coords_per_param: int = 25,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` re-evaluates the scalar loss from the current parameter values.
    Requires float64 parameters; coordinates are subsampled above
    ``max_coords_per_param`` per parameter.
    """
    for p in params:
        if p.data.dtype != np.float64:
            raise ValueError(f"gradient_check requires float64 parameters ({p.name})")
    zero_grads(params)
    loss = f()
    if not np.isfinite(loss.data):
        raise NumericsError("gradient_check aborted: non-finite loss")
    loss.backward()
    analytic = [p.grad.copy() for p in params]

    gen = (rng or RandomSource(0, "gradcheck")).generator()
    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        n = flat.size
        if n <= max_coords_per_param:
            coords = np.arange(n)
        else:
            coords = gen.choice(n, size=max_coords_per_param, replace=False)
        aflat = a.reshape(-1)
        for c in coords:
            saved = flat[c]
            flat[c] = saved + h
            up = float(f().data)
            flat[c] = saved - h
            down = float(f().data)
            flat[c] = saved
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericsError("gradient_check aborted: non-finite loss")
            numeric = (up - down) / (2 * h)
            denom = max(1.0, abs(aflat[c]), abs(numeric))
            worst = max(worst, abs(aflat[c] - numeric) / denom)
    return worst
