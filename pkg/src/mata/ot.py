"""Feature alignment via entropic optimal transport.

Builds a normalized pairwise-distance cost between two same-batch feature
sets, solves for a coupling with log-domain Sinkhorn scaling under uniform
marginals, and applies the coupling as a barycentric map. The coupling is
treated as a constant by the differentiation graph: gradients flow through
the linear application of the plan, never through the solver iterations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import NumericsError, ShapeError, Tensor


@dataclass
class SinkhornConfig:
    epsilon: float = 0.1
    max_iterations: int = 100
    tolerance: float = 1e-6
    log_domain: bool = True

    def validate(self) -> None:
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if self.tolerance <= 0:
            raise ValueError(f"tolerance must be > 0, got {self.tolerance}")


@dataclass
class CostMatrix:
    values: np.ndarray  # (B1, B2), entries in [0, 1]

    @property
    def shape(self) -> tuple:
        return self.values.shape


@dataclass
class TransportPlan:
    gamma: np.ndarray  # (B1, B2), nonnegative, total mass 1
    row_marginal: np.ndarray  # a, length B1
    col_marginal: np.ndarray  # b, length B2
    iterations_used: int
    final_marginal_error: float
    converged: bool
    diagnostics: dict = field(default_factory=dict)


def cost_matrix(x1, x2) -> CostMatrix:
    """Pairwise Euclidean distances between rows, scaled to a max of 1.

    An all-zero distance matrix (identical batches) is returned as-is rather
    than divided by zero.
    """
    a = x1.data if isinstance(x1, Tensor) else np.asarray(x1)
    b = x2.data if isinstance(x2, Tensor) else np.asarray(x2)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError(f"cost_matrix needs (B1,d) and (B2,d), got {a.shape} and {b.shape}")
    diff = a[:, None, :] - b[None, :, :]
    raw = np.sqrt((diff * diff).sum(axis=2))
    peak = raw.max()
    if peak > 0:
        raw = raw / peak
    return CostMatrix(values=raw)


def _logsumexp(x: np.ndarray, axis: int) -> np.ndarray:
    m = x.max(axis=axis, keepdims=True)
    return np.log(np.exp(x - m).sum(axis=axis, keepdims=True)) + m


def _marginal_error(gamma: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    return float(
        np.abs(gamma.sum(axis=1) - a).sum() + np.abs(gamma.sum(axis=0) - b).sum()
    )


def sinkhorn(M: CostMatrix, cfg: SinkhornConfig | None = None) -> TransportPlan:
    """Solve for the entropic coupling of uniform batch marginals.

    Runs alternating scaling on the kernel exp(-M/epsilon), in the log
    domain by default. Non-convergence within the iteration budget returns a
    flagged plan; a non-finite kernel raises ``NumericsError``.
    """
    cfg = cfg or SinkhornConfig()
    cfg.validate()
    B1, B2 = M.values.shape
    a = np.full(B1, 1.0 / B1)
    b = np.full(B2, 1.0 / B2)
    Mv = np.asarray(M.values, dtype=np.float64)

    if cfg.log_domain:
        log_k = -Mv / cfg.epsilon
        log_a, log_b = np.log(a), np.log(b)
        f = np.zeros(B1)
        g = np.zeros(B2)
        gamma = np.exp(f[:, None] + log_k + g[None, :])
        err = _marginal_error(gamma, a, b)
        iters = 0
        while err > cfg.tolerance and iters < cfg.max_iterations:
            f = log_a - _logsumexp(log_k + g[None, :], axis=1)[:, 0]
            g = log_b - _logsumexp(log_k + f[:, None], axis=0)[0, :]
            gamma = np.exp(f[:, None] + log_k + g[None, :])
            err = _marginal_error(gamma, a, b)
            iters += 1
    else:
        K = np.exp(-Mv / cfg.epsilon)
        if not np.all(np.isfinite(K)) or K.min() <= 0.0:
            raise NumericsError(
                "sinkhorn kernel underflow: increase epsilon or use log_domain"
            )
        u = np.ones(B1)
        v = np.ones(B2)
        gamma = u[:, None] * K * v[None, :]
        err = _marginal_error(gamma, a, b)
        iters = 0
        while err > cfg.tolerance and iters < cfg.max_iterations:
            u = a / (K @ v)
            v = b / (K.T @ u)
            gamma = u[:, None] * K * v[None, :]
            err = _marginal_error(gamma, a, b)
            iters += 1

    if not np.all(np.isfinite(gamma)):
        raise NumericsError(
            "sinkhorn produced a non-finite plan: increase epsilon or tolerance"
        )
    return TransportPlan(
        gamma=gamma.astype(T.default_dtype()),
        row_marginal=a,
        col_marginal=b,
        iterations_used=iters,
        final_marginal_error=err,
        converged=err <= cfg.tolerance,
        diagnostics={"epsilon": cfg.epsilon},
    )


def sinkhorn_reference(M: CostMatrix, epsilon: float, iterations: int = 10_000) -> np.ndarray:
    """High-precision fixed-iteration solver used as an independent check."""
    B1, B2 = M.values.shape
    a = np.full(B1, 1.0 / B1)
    b = np.full(B2, 1.0 / B2)
    log_k = -np.asarray(M.values, dtype=np.float64) / epsilon
    f = np.zeros(B1)
    g = np.zeros(B2)
    for _ in range(iterations):
        f = np.log(a) - _logsumexp(log_k + g[None, :], axis=1)[:, 0]
        g = np.log(b) - _logsumexp(log_k + f[:, None], axis=0)[0, :]
    return np.exp(f[:, None] + log_k + g[None, :])


def _barycentric_weights(gamma: np.ndarray) -> np.ndarray:
    rows = gamma.sum(axis=1, keepdims=True)
    safe = np.where(rows > 0, rows, 1.0)
    return gamma / safe


def transport(plan: TransportPlan, x2) -> Tensor:
    """Map target features onto the source batch: row-normalized gamma @ x2.

    The plan enters the graph as a constant; gradients reach x2 only.
    """
    x2 = T.as_tensor(x2)
    if plan.gamma.shape[1] != x2.data.shape[0]:
        raise ShapeError(
            f"plan columns {plan.gamma.shape} do not match features {x2.shape}"
        )
    weights = _barycentric_weights(plan.gamma).astype(x2.data.dtype)
    return T.matmul(Tensor(weights), x2)


def transport_reverse(plan: TransportPlan, x1) -> Tensor:
    """Mirror map using the transposed plan and column marginals."""
    x1 = T.as_tensor(x1)
    if plan.gamma.shape[0] != x1.data.shape[0]:
        raise ShapeError(
            f"plan rows {plan.gamma.shape} do not match features {x1.shape}"
        )
    weights = _barycentric_weights(plan.gamma.T).astype(x1.data.dtype)
    return T.matmul(Tensor(weights), x1)
