"""Synthetic ridge least-squares objectives (single- and multi-target).

The loss for a parameter vector ``x`` of length m (or a flattened m x q
matrix ``X`` for multi-target problems) is

    f(x) = (1/n) sum_i [ ||x^T s_i - y_i||^2 + ridge * ||x||^2 ]

so every per-sample term carries its own ridge contribution and the
per-sample gradients average exactly to the full gradient. Datasets are
immutable after construction and all operations are read-only.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Dataset",
    "SyntheticConfig",
    "generate_synthetic",
    "synthetic_truth",
    "objective_value",
    "estimate_variance_bound",
    "save_dataset_csv",
    "load_dataset_csv",
]


def _frozen_array(a, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Dataset:
    """n samples of length m with scalar or length-q vector targets.

    Parameters handed to the gradient/loss methods are flat vectors: length m
    for single-target data, length m*q (row-major flattening of the m x q
    matrix parameter) for multi-target data.
    """

    samples: np.ndarray
    targets: np.ndarray
    ridge_lambda: float = 0.0

    def __post_init__(self):
        samples = _frozen_array(self.samples)
        targets = _frozen_array(self.targets)
        if samples.ndim != 2 or samples.shape[0] < 1 or samples.shape[1] < 1:
            raise ValueError(f"samples must be a nonempty 2-D array, got shape {samples.shape}")
        if targets.ndim not in (1, 2) or targets.shape[0] != samples.shape[0]:
            raise ValueError(
                f"targets must have one row per sample, got {targets.shape} for {samples.shape[0]} samples"
            )
        if not np.all(np.isfinite(samples)) or not np.all(np.isfinite(targets)):
            raise ValueError("dataset has non-finite entries")
        if self.ridge_lambda < 0:
            raise ValueError("ridge_lambda must be nonnegative")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "ridge_lambda", float(self.ridge_lambda))

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def n_features(self) -> int:
        return self.samples.shape[1]

    @property
    def n_targets(self) -> int:
        return 1 if self.targets.ndim == 1 else self.targets.shape[1]

    @property
    def parameter_length(self) -> int:
        return self.n_features * self.n_targets

    def _check_param(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.parameter_length,):
            raise ValueError(
                f"parameter must be a flat vector of length {self.parameter_length}, got shape {x.shape}"
            )
        return x

    def _as_matrix_param(self, x: np.ndarray) -> np.ndarray:
        return x.reshape(self.n_features, self.n_targets)

    def loss(self, x) -> float:
        """f(x): mean squared residual plus the ridge term."""
        x = self._check_param(x)
        if self.targets.ndim == 1:
            r = self.samples @ x - self.targets
        else:
            r = self.samples @ self._as_matrix_param(x) - self.targets
        return float(np.sum(r * r) / self.n_samples + self.ridge_lambda * np.dot(x, x))

    def sample_gradient(self, x, i: int) -> np.ndarray:
        """Gradient of the i-th summand, 2*s_i*(s_i^T x - y_i) + 2*ridge*x."""
        x = self._check_param(x)
        if not 0 <= i < self.n_samples:
            raise IndexError(f"sample index {i} out of range [0, {self.n_samples})")
        s = self.samples[i]
        if self.targets.ndim == 1:
            g = (2.0 * (s @ x - self.targets[i])) * s
        else:
            xm = self._as_matrix_param(x)
            g = (2.0 * np.outer(s, s @ xm - self.targets[i])).ravel()
        return g + (2.0 * self.ridge_lambda) * x

    def full_gradient(self, x) -> np.ndarray:
        """Gradient of f, the average of all per-sample gradients."""
        x = self._check_param(x)
        if self.targets.ndim == 1:
            r = self.samples @ x - self.targets
            g = (2.0 / self.n_samples) * (self.samples.T @ r)
        else:
            r = self.samples @ self._as_matrix_param(x) - self.targets
            g = ((2.0 / self.n_samples) * (self.samples.T @ r)).ravel()
        return g + (2.0 * self.ridge_lambda) * x

    def hessian_block(self) -> np.ndarray:
        """The constant m x m Hessian block 2((1/n) S^T S + ridge I).

        For multi-target data the full Hessian over the flattened parameter
        is block diagonal with n_targets copies of this block, so its extreme
        eigenvalues equal the block's.
        """
        s = self.samples
        h = (2.0 / self.n_samples) * (s.T @ s)
        h[np.diag_indices_from(h)] += 2.0 * self.ridge_lambda
        return h


@dataclass(frozen=True)
class SyntheticConfig:
    """Shape and generator settings for a random ridge least-squares dataset.

    ``ground_truth_sparsity`` is the fraction of ground-truth entries forced
    to zero; the remaining entries are +-1.
    """

    n: int
    m: int
    targets: int = 1
    ridge_lambda: float = 0.0
    noise_std: float = 0.0
    ground_truth_sparsity: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.m < 1 or self.targets < 1:
            raise ValueError("n, m and targets must be >= 1")
        if not 0.0 <= self.ground_truth_sparsity <= 1.0:
            raise ValueError("ground_truth_sparsity must be in [0, 1]")
        if self.ridge_lambda < 0 or self.noise_std < 0:
            raise ValueError("ridge_lambda and noise_std must be nonnegative")


def _generate(cfg: SyntheticConfig):
    rng = np.random.default_rng(cfg.seed)
    samples = rng.standard_normal((cfg.n, cfg.m))
    size = cfg.m * cfg.targets
    truth = rng.choice([-1.0, 1.0], size=size)
    n_zero = int(round(cfg.ground_truth_sparsity * size))
    if n_zero:
        truth[rng.permutation(size)[:n_zero]] = 0.0
    if cfg.targets == 1:
        clean = samples @ truth
    else:
        clean = samples @ truth.reshape(cfg.m, cfg.targets)
    noise = cfg.noise_std * rng.standard_normal(clean.shape) if cfg.noise_std > 0 else 0.0
    ds = Dataset(samples=samples, targets=clean + noise, ridge_lambda=cfg.ridge_lambda)
    return ds, truth


def generate_synthetic(cfg: SyntheticConfig) -> Dataset:
    """Random dataset: i.i.d. standard normal samples, +-1 sparse ground
    truth, Gaussian target noise. Deterministic for a fixed seed."""
    return _generate(cfg)[0]


def synthetic_truth(cfg: SyntheticConfig) -> np.ndarray:
    """The flat ground-truth parameter used by ``generate_synthetic(cfg)``."""
    return _generate(cfg)[1]


def objective_value(ds: Dataset, reg, x) -> float:
    """P(x) = f(x) + h(x); pass ``reg=None`` for the pure quadratic."""
    return ds.loss(x) + (reg.value(np.asarray(x, dtype=float)) if reg is not None else 0.0)


def estimate_variance_bound(ds: Dataset, probe_points) -> float:
    """Empirical gradient-noise bound: the max over probes of
    (1/n) sum_i ||grad f_i(x) - grad f(x)||^2."""
    probes = list(probe_points)
    if not probes:
        raise ValueError("at least one probe point is required")
    worst = 0.0
    for x in probes:
        full = ds.full_gradient(x)
        acc = 0.0
        for i in range(ds.n_samples):
            diff = ds.sample_gradient(x, i) - full
            acc += float(diff @ diff)
        worst = max(worst, acc / ds.n_samples)
    return worst


def save_dataset_csv(ds: Dataset, path) -> None:
    """One sample per row; feature columns first, target columns trailing."""
    q = ds.n_targets
    header = [f"feature_{j}" for j in range(ds.n_features)] + [f"target_{j}" for j in range(q)]
    targets = ds.targets.reshape(ds.n_samples, q)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(ds.n_samples):
            writer.writerow(
                [repr(float(v)) for v in ds.samples[i]] + [repr(float(v)) for v in targets[i]]
            )


def load_dataset_csv(path, ridge_lambda: float = 0.0) -> Dataset:
    """Inverse of :func:`save_dataset_csv`; ``ridge_lambda`` is not stored in
    the file and must be supplied."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        n_feat = sum(1 for name in header if name.startswith("feature_"))
        n_targ = len(header) - n_feat
        if n_feat < 1 or n_targ < 1:
            raise ValueError(f"{path}: header must list feature_* then target_* columns")
        rows = [[float(v) for v in row] for row in reader if row]
    data = np.asarray(rows)
    samples = data[:, :n_feat]
    targets = data[:, n_feat:]
    if n_targ == 1:
        targets = targets[:, 0]
    return Dataset(samples=samples, targets=targets, ridge_lambda=ridge_lambda)
