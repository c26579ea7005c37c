import math

import numpy as np
import pytest

from mata import tensor as T
from mata.ot import (
    CostMatrix,
    SinkhornConfig,
    TransportPlan,
    cost_matrix,
    sinkhorn,
    sinkhorn_reference,
    transport,
    transport_reverse,
)
from mata.tensor import NumericsError, ShapeError


class TestCostMatrix:
    def test_three_four_five(self):
        x = np.array([[0.0, 0.0], [3.0, 4.0]])
        M = cost_matrix(x, x)
        np.testing.assert_allclose(M.values, [[0, 1], [1, 0]], atol=1e-12)

    def test_zero_guard_single_row(self):
        x = np.array([[1.0, 2.0]])
        np.testing.assert_array_equal(cost_matrix(x, x).values, [[0.0]])

    def test_matches_double_loop_oracle(self):
        gen = np.random.default_rng(17)
        x1 = gen.normal(size=(5, 8))
        x2 = gen.normal(size=(6, 8))
        M = cost_matrix(x1, x2)
        raw = np.zeros((5, 6))
        for i in range(5):
            for j in range(6):
                raw[i, j] = math.sqrt(((x1[i] - x2[j]) ** 2).sum())
        np.testing.assert_allclose(M.values, raw / raw.max(), rtol=1e-10)
        assert M.values.min() >= 0 and M.values.max() == pytest.approx(1.0)

    def test_entry_zero_iff_rows_equal(self):
        x1 = np.array([[1.0, 0.0], [0.0, 1.0]])
        x2 = np.array([[0.0, 1.0], [2.0, 2.0]])
        M = cost_matrix(x1, x2)
        assert M.values[1, 0] == 0.0
        assert (M.values > 0).sum() == 3

    def test_dim_mismatch(self):
        with pytest.raises(ShapeError):
            cost_matrix(np.zeros((2, 3)), np.zeros((2, 4)))


class TestSinkhorn:
    def test_constant_cost_gives_uniform_outer_product(self):
        plan = sinkhorn(CostMatrix(np.zeros((2, 2))))
        np.testing.assert_allclose(plan.gamma, np.full((2, 2), 0.25), atol=1e-9)
        assert plan.converged

    def test_two_by_two_closed_form(self):
        plan = sinkhorn(
            CostMatrix(np.array([[0.0, 1.0], [1.0, 0.0]])),
            SinkhornConfig(epsilon=0.1),
        )
        p = 0.5 * math.exp(10) / (1 + math.exp(10))
        np.testing.assert_allclose(np.diag(plan.gamma), [p, p], atol=1e-6)
        np.testing.assert_allclose(plan.gamma[0, 1], 0.5 - p, atol=1e-6)

    def test_matches_high_precision_reference(self):
        gen = np.random.default_rng(5)
        M = cost_matrix(gen.normal(size=(8, 4)), gen.normal(size=(8, 4)))
        plan = sinkhorn(M, SinkhornConfig(epsilon=0.1))
        ref = sinkhorn_reference(M, 0.1)
        assert plan.final_marginal_error <= 1e-6
        np.testing.assert_allclose(plan.gamma.astype(np.float64), ref, atol=1e-6)

    def test_nonconvergence_flag_not_exception(self):
        gen = np.random.default_rng(9)
        M = cost_matrix(gen.normal(size=(12, 3)), gen.normal(size=(12, 3)))
        plan = sinkhorn(M, SinkhornConfig(epsilon=0.01, max_iterations=2))
        assert not plan.converged
        assert plan.iterations_used == 2

    def test_linear_domain_underflow_raises(self):
        M = CostMatrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
        with pytest.raises(NumericsError, match="epsilon|log_domain"):
            sinkhorn(M, SinkhornConfig(epsilon=1e-4, log_domain=False))

    def test_linear_domain_agrees_with_log_domain(self):
        gen = np.random.default_rng(2)
        M = cost_matrix(gen.normal(size=(6, 4)), gen.normal(size=(5, 4)))
        a = sinkhorn(M, SinkhornConfig(epsilon=0.5, log_domain=True))
        b = sinkhorn(M, SinkhornConfig(epsilon=0.5, log_domain=False))
        np.testing.assert_allclose(a.gamma, b.gamma, atol=1e-6)

    def test_invalid_config(self):
        for bad in (
            SinkhornConfig(epsilon=0.0),
            SinkhornConfig(max_iterations=0),
            SinkhornConfig(tolerance=0.0),
        ):
            with pytest.raises(ValueError):
                bad.validate()

    def test_feasibility_properties(self):
        gen = np.random.default_rng(23)
        for _ in range(20):
            B1, B2 = int(gen.integers(2, 17)), int(gen.integers(2, 17))
            M = cost_matrix(gen.normal(size=(B1, 5)), gen.normal(size=(B2, 5)))
            plan = sinkhorn(M, SinkhornConfig(epsilon=0.1))
            assert plan.converged
            assert (plan.gamma >= 0).all()
            assert plan.gamma.sum() == pytest.approx(1.0, abs=1e-6)
            g = plan.gamma.astype(np.float64)
            err = (
                np.abs(g.sum(axis=1) - plan.row_marginal).sum()
                + np.abs(g.sum(axis=0) - plan.col_marginal).sum()
            )
            assert err <= 1e-5  # float32 storage of a 1e-6-converged plan

    def test_large_epsilon_limit_is_uniform(self):
        gen = np.random.default_rng(3)
        M = cost_matrix(gen.normal(size=(7, 4)), gen.normal(size=(5, 4)))
        plan = sinkhorn(M, SinkhornConfig(epsilon=1e3))
        outer = np.outer(plan.row_marginal, plan.col_marginal)
        assert np.abs(plan.gamma - outer).max() <= 1e-4

    def test_permutation_equivariance(self):
        gen = np.random.default_rng(31)
        x1 = gen.normal(size=(6, 4))
        x2 = gen.normal(size=(5, 4))
        perm = gen.permutation(6)
        plan = sinkhorn(cost_matrix(x1, x2), SinkhornConfig(epsilon=0.2))
        plan_p = sinkhorn(cost_matrix(x1[perm], x2), SinkhornConfig(epsilon=0.2))
        np.testing.assert_allclose(plan_p.gamma, plan.gamma[perm], atol=1e-7)
        out = transport(plan, x2).data
        out_p = transport(plan_p, x2).data
        np.testing.assert_allclose(out_p, out[perm], atol=1e-6)

    def test_common_scaling_invariance(self):
        gen = np.random.default_rng(13)
        x1 = gen.normal(size=(4, 3))
        x2 = gen.normal(size=(4, 3))
        a = sinkhorn(cost_matrix(x1, x2), SinkhornConfig(epsilon=0.1))
        b = sinkhorn(cost_matrix(7.5 * x1, 7.5 * x2), SinkhornConfig(epsilon=0.1))
        np.testing.assert_allclose(a.gamma, b.gamma, atol=1e-7)


class TestTransport:
    def test_singleton_batch_identity(self):
        x2 = np.array([[2.0, -1.0, 3.0]], dtype=np.float32)
        plan = sinkhorn(CostMatrix(np.zeros((1, 1))))
        np.testing.assert_allclose(transport(plan, x2).data, x2, atol=1e-7)
        x1 = np.array([[5.0, 5.0]], dtype=np.float32)
        np.testing.assert_allclose(transport_reverse(plan, x1).data, x1, atol=1e-7)

    def test_uniform_plan_averages(self):
        gen = np.random.default_rng(0)
        x2 = gen.normal(size=(3, 4)).astype(np.float32)
        plan = sinkhorn(CostMatrix(np.zeros((2, 3))))
        out = transport(plan, x2)
        np.testing.assert_allclose(out.data, np.tile(x2.mean(axis=0), (2, 1)), atol=1e-6)

    def test_diagonal_dominant_plan_recovers_rows(self):
        plan = sinkhorn(
            CostMatrix(np.array([[0.0, 1.0], [1.0, 0.0]])),
            SinkhornConfig(epsilon=0.1),
        )
        x2 = np.array([[1.0, 2.0], [10.0, 20.0]], dtype=np.float32)
        out = transport(plan, x2).data
        np.testing.assert_allclose(out, x2, rtol=1e-3)

    def test_transpose_involution(self):
        gen = np.random.default_rng(8)
        plan = sinkhorn(cost_matrix(gen.normal(size=(4, 3)), gen.normal(size=(5, 3))))
        np.testing.assert_array_equal(plan.gamma.T.T, plan.gamma)

    def test_reverse_uniform_plan_averages(self):
        gen = np.random.default_rng(1)
        x1 = gen.normal(size=(2, 4)).astype(np.float32)
        plan = sinkhorn(CostMatrix(np.zeros((2, 3))))
        out = transport_reverse(plan, x1)
        np.testing.assert_allclose(out.data, np.tile(x1.mean(axis=0), (3, 1)), atol=1e-6)

    def test_plan_is_stop_gradient(self):
        with T.precision("float64"):
            x1 = T.Parameter(np.array([[0.0, 0.0], [3.0, 4.0]]), "x1")
            x2 = T.Parameter(np.array([[1.0, 1.0], [2.0, 2.0]]), "x2")
            plan = sinkhorn(cost_matrix(x1, x2), SinkhornConfig(epsilon=0.1))
            T.sum_all(transport(plan, x2)).backward()
            # x1 enters only through the (constant) plan, so it gets no gradient
            np.testing.assert_array_equal(x1.grad, np.zeros((2, 2)))
            assert np.any(x2.grad != 0)

    def test_shape_mismatch(self):
        plan = TransportPlan(
            gamma=np.full((2, 3), 1 / 6),
            row_marginal=np.full(2, 0.5),
            col_marginal=np.full(3, 1 / 3),
            iterations_used=0,
            final_marginal_error=0.0,
            converged=True,
        )
        with pytest.raises(ShapeError):
            transport(plan, np.zeros((4, 2)))
        with pytest.raises(ShapeError):
            transport_reverse(plan, np.zeros((4, 2)))
