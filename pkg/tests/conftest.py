import numpy as np
import pytest

from dapsgd import (
    GroupLasso,
    L1,
    SyntheticConfig,
    generate_synthetic,
    solve_reference,
)

# Desk-scale problems shared across runtime/acceptance tests. Small enough to
# simulate tens of thousands of iterations per seed, ridge keeps mu > 0.
DESK_L1 = SyntheticConfig(
    n=100, m=50, ridge_lambda=0.5, noise_std=0.1, ground_truth_sparsity=0.5, seed=1234
)
DESK_L1_SMALL = SyntheticConfig(
    n=100, m=20, ridge_lambda=0.5, noise_std=0.1, ground_truth_sparsity=0.5, seed=4321
)
DESK_GROUP = SyntheticConfig(
    n=100, m=50, ridge_lambda=0.5, noise_std=0.1, ground_truth_sparsity=0.5, seed=2718
)

L1_LAMBDA = 0.1
GROUP_LAMBDA = 0.1
GROUP_BOUNDARIES = tuple(range(0, 55, 5))  # ten groups of five


@pytest.fixture(scope="session")
def desk_l1():
    ds = generate_synthetic(DESK_L1)
    reg = L1(L1_LAMBDA)
    ref = solve_reference(ds, reg)
    return ds, reg, ref


@pytest.fixture(scope="session")
def desk_l1_small():
    ds = generate_synthetic(DESK_L1_SMALL)
    reg = L1(L1_LAMBDA)
    ref = solve_reference(ds, reg)
    return ds, reg, ref


@pytest.fixture(scope="session")
def desk_group():
    ds = generate_synthetic(DESK_GROUP)
    reg = GroupLasso(GROUP_LAMBDA, GROUP_BOUNDARIES)
    ref = solve_reference(ds, reg)
    return ds, reg, ref


def random_regularizer(kind: str, rng: np.random.Generator, max_len: int = 10):
    """A random instance of the given variant plus a matching random point."""
    from dapsgd import FusedLasso, NuclearNorm

    if kind == "l1":
        m = int(rng.integers(2, max_len + 1))
        return L1(float(rng.uniform(0.05, 1.0))), rng.standard_normal(m)
    if kind == "group_lasso":
        n_groups = int(rng.integers(1, 4))
        sizes = rng.integers(1, 4, size=n_groups)
        bounds = tuple(np.concatenate([[0], np.cumsum(sizes)]).tolist())
        return GroupLasso(float(rng.uniform(0.05, 1.0)), bounds), rng.standard_normal(bounds[-1])
    if kind == "fused_lasso":
        m = int(rng.integers(2, max_len + 1))
        return FusedLasso(float(rng.uniform(0.05, 1.0))), rng.standard_normal(m)
    if kind == "nuclear_norm":
        rows = int(rng.integers(2, 5))
        cols = int(rng.integers(2, 5))
        return (
            NuclearNorm(float(rng.uniform(0.05, 0.8)), rows, cols),
            rng.standard_normal(rows * cols),
        )
    raise ValueError(kind)


ALL_KINDS = ("l1", "group_lasso", "fused_lasso", "nuclear_norm")
