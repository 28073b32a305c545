import math

import numpy as np
import pytest

from conftest import ALL_KINDS, random_regularizer
from dapsgd import (
    FusedLasso,
    GroupLasso,
    L1,
    NuclearNorm,
    ProxSolveConfig,
    prox_call_count,
    prox_objective,
    prox_oracle,
    subgradient_bound,
)
from dapsgd.proximal import OracleConvergenceError, ProxConvergenceError


class TestValues:
    def test_l1(self):
        assert L1(2.0).value(np.array([1.0, -3.0])) == 8.0

    def test_group_lasso(self):
        reg = GroupLasso(1.0, (0, 2, 4))
        assert reg.value(np.array([3.0, 4.0, 0.0, 0.0])) == pytest.approx(5.0)

    def test_nuclear_diag(self):
        reg = NuclearNorm(1.0, 2, 2)
        assert reg.value(np.diag([3.0, 1.0]).ravel()) == pytest.approx(4.0)

    def test_fused(self):
        assert FusedLasso(2.0).value(np.array([1.0, 0.0, 2.0])) == pytest.approx(6.0)

    def test_zero_at_origin(self):
        rng = np.random.default_rng(0)
        for kind in ALL_KINDS:
            reg, x = random_regularizer(kind, rng)
            assert reg.value(np.zeros_like(x)) == 0.0
            assert reg.value(x) >= 0.0


class TestProxExamples:
    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_zero_maps_to_zero(self, kind):
        reg, x = random_regularizer(kind, np.random.default_rng(1))
        out = reg.prox(np.zeros_like(x), 0.7)
        assert np.allclose(out, 0.0, atol=1e-15)

    def test_l1_soft_threshold(self):
        out = L1(1.0).prox(np.array([3.0, -0.5, 1.0]), 1.0)
        assert np.allclose(out, [2.0, 0.0, 0.0], atol=1e-15)

    def test_group_lasso_block_shrink(self):
        reg = GroupLasso(1.0, (0, 2, 4))
        out = reg.prox(np.array([3.0, 4.0, 0.3, 0.4]), 1.0)
        # group norms 5 and 0.5: scales (1 - 1/5) and 0
        assert np.allclose(out, [2.4, 3.2, 0.0, 0.0], atol=1e-15)

    def test_fused_two_point(self):
        out = FusedLasso(0.25).prox(np.array([1.0, 0.0]), 1.0)
        assert np.allclose(out, [0.75, 0.25], atol=1e-9)

    def test_fused_two_point_grid_oracle(self):
        # fine 2-D grid search around the expected minimizer
        reg = FusedLasso(0.25)
        x = np.array([1.0, 0.0])
        grid = np.linspace(-0.5, 1.5, 401)
        best, best_val = None, math.inf
        for a in grid:
            for b in grid:
                y = np.array([a, b])
                v = prox_objective(reg, x, 1.0, y)
                if v < best_val:
                    best, best_val = y, v
        assert np.linalg.norm(best - [0.75, 0.25]) <= 1e-2
        assert prox_objective(reg, x, 1.0, np.array([0.75, 0.25])) <= best_val + 1e-12

    def test_fused_constant_vector_fixed_point(self):
        for lam in (0.1, 3.0):
            x = np.full(6, 2.5)
            assert np.allclose(FusedLasso(lam).prox(x, 1.3), x, atol=1e-12)

    def test_nuclear_diag_svt(self):
        reg = NuclearNorm(1.0, 2, 2)
        out = reg.prox(np.diag([3.0, 1.0]).ravel(), 1.0)
        assert np.allclose(out.reshape(2, 2), np.diag([2.0, 0.0]), atol=1e-12)

    def test_nuclear_diag_brute_force_over_diagonals(self):
        # brute force over diagonal candidates confirms diag(2, 0)
        reg = NuclearNorm(1.0, 2, 2)
        x = np.diag([3.0, 1.0]).ravel()
        grid = np.linspace(-0.5, 3.5, 401)
        best_val = math.inf
        best = None
        for a in grid:
            for b in grid:
                y = np.diag([a, b]).ravel()
                v = prox_objective(reg, x, 1.0, y)
                if v < best_val:
                    best, best_val = (a, b), v
        assert abs(best[0] - 2.0) <= 1e-2 and abs(best[1]) <= 1e-2


class TestProxProperties:
    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_non_expansive(self, kind):
        rng = np.random.default_rng(17)
        for _ in range(200):
            reg, x = random_regularizer(kind, rng)
            y = x + rng.standard_normal(x.shape) * rng.uniform(0.1, 3.0)
            eta = float(rng.uniform(0.1, 2.0))
            lhs = np.linalg.norm(reg.prox(x, eta) - reg.prox(y, eta))
            assert lhs <= np.linalg.norm(x - y) + 1e-10

    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_subgradient_inclusion(self, kind):
        # h(z) >= h(x') + <(x - x')/eta, z - x'> for the prox output x'
        rng = np.random.default_rng(23)
        for _ in range(20):
            reg, x = random_regularizer(kind, rng)
            eta = float(rng.uniform(0.2, 1.5))
            x_prime = reg.prox(x, eta)
            h_prime = reg.value(x_prime)
            g = (x - x_prime) / eta
            for _ in range(50):
                z = rng.standard_normal(x.shape) * rng.uniform(0.3, 2.0)
                slack = reg.value(z) - h_prime - float(g @ (z - x_prime))
                assert slack >= -1e-8

    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_objective_dominance(self, kind):
        rng = np.random.default_rng(29)
        for _ in range(25):
            reg, x = random_regularizer(kind, rng)
            eta = float(rng.uniform(0.2, 1.5))
            x_prime = reg.prox(x, eta)
            f_prime = prox_objective(reg, x, eta, x_prime)
            assert f_prime <= prox_objective(reg, x, eta, x) + 1e-12
            oracle = prox_oracle(reg, x, eta)
            assert f_prime <= prox_objective(reg, x, eta, oracle) + 1e-8


class TestOracle:
    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_oracle_matches_prox(self, kind):
        rng = np.random.default_rng(31)
        for _ in range(25):
            reg, x = random_regularizer(kind, rng)
            eta = float(rng.uniform(0.2, 1.5))
            gap = np.linalg.norm(reg.prox(x, eta) - prox_oracle(reg, x, eta))
            assert gap <= 1e-5

    def test_oracle_l1_example(self):
        got = prox_oracle(L1(1.0), np.array([3.0, -0.5, 1.0]), 1.0)
        assert np.linalg.norm(got - [2.0, 0.0, 0.0]) <= 1e-6

    def test_oracle_fused_example(self):
        got = prox_oracle(FusedLasso(0.25), np.array([1.0, 0.0]), 1.0)
        assert np.linalg.norm(got - [0.75, 0.25]) <= 1e-5

    def test_oracle_zero(self):
        rng = np.random.default_rng(37)
        for kind in ALL_KINDS:
            reg, x = random_regularizer(kind, rng)
            assert np.linalg.norm(prox_oracle(reg, np.zeros_like(x), 0.9)) <= 1e-8

    def test_oracle_budget_error(self):
        with pytest.raises(OracleConvergenceError, match="budget"):
            prox_oracle(FusedLasso(0.8), np.random.default_rng(0).standard_normal(8), 1.0, budget=3)


class TestSubgradientBound:
    def test_l1_paper_constant(self):
        assert subgradient_bound(L1(1.0), 5) == 5.0

    def test_group_paper_constant(self):
        assert subgradient_bound(GroupLasso(1.0, (0, 1, 3, 6)), 6) == 3.0

    def test_nuclear_paper_constant(self):
        assert subgradient_bound(NuclearNorm(1.0, 50, 40), 2000) == 1640.0

    def test_fused_paper_constant(self):
        assert subgradient_bound(FusedLasso(1.0), 4) == pytest.approx(math.sqrt(2) * 12)

    def test_lambda_scaling(self):
        assert subgradient_bound(L1(2.5), 4) == 10.0

    def test_sampled_subgradients_within_bound(self):
        # direct subgradients of L1 / group lasso never exceed the constant
        rng = np.random.default_rng(41)
        for _ in range(100):
            reg, x = random_regularizer("l1", rng)
            sub = reg.lam * np.sign(x)
            assert np.linalg.norm(sub) <= subgradient_bound(reg, x.shape[0]) + 1e-12
            reg, x = random_regularizer("group_lasso", rng)
            sub = np.zeros_like(x)
            for sl in reg.groups():
                nrm = np.linalg.norm(x[sl])
                if nrm > 0:
                    sub[sl] = reg.lam * x[sl] / nrm
            assert np.linalg.norm(sub) <= subgradient_bound(reg, x.shape[0]) + 1e-12

    def test_structural_mismatch(self):
        with pytest.raises(ValueError):
            subgradient_bound(GroupLasso(1.0, (0, 2)), 5)
        with pytest.raises(ValueError):
            subgradient_bound(NuclearNorm(1.0, 3, 3), 8)


class TestErrors:
    def test_fused_dual_cap_carries_residual(self):
        # a large box keeps the dual solution interior, where the
        # ill-conditioned dual QP cannot converge within 3 iterations
        cfg = ProxSolveConfig(dual_tolerance=1e-14, dual_max_iterations=3)
        x = np.random.default_rng(0).standard_normal(12)
        with pytest.raises(ProxConvergenceError) as exc_info:
            FusedLasso(10.0).prox(x, 1.0, cfg)
        assert exc_info.value.residual > 0

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            GroupLasso(1.0, (0, 2, 4)).prox(np.ones(5), 1.0)
        with pytest.raises(ValueError):
            NuclearNorm(1.0, 2, 3).value(np.ones(5))

    def test_bad_lambda(self):
        for cls in (L1, FusedLasso):
            with pytest.raises(ValueError):
                cls(0.0)
        with pytest.raises(ValueError):
            GroupLasso(-1.0, (0, 2))

    def test_bad_boundaries(self):
        for bad in ((1, 3), (0,), (0, 3, 2)):
            with pytest.raises(ValueError):
                GroupLasso(1.0, bad)

    def test_bad_eta(self):
        with pytest.raises(ValueError):
            L1(1.0).prox(np.ones(2), 0.0)

    def test_bad_prox_config(self):
        with pytest.raises(ValueError):
            ProxSolveConfig(dual_tolerance=0.0)
        with pytest.raises(ValueError):
            ProxSolveConfig(dual_max_iterations=0)


def test_prox_call_counter_increments():
    before = prox_call_count()
    L1(1.0).prox(np.ones(3), 1.0)
    NuclearNorm(1.0, 2, 2).prox(np.ones(4), 1.0)
    assert prox_call_count() == before + 2
