"""Small dense linear algebra: one-sided Jacobi SVD and extremal eigenvalue
estimation for quadratic objectives.

Everything here is a pure function of its inputs and safe to call from any
number of threads. Matrices are plain ``numpy`` 2-D float arrays.
"""

from __future__ import annotations

import warnings
from typing import NamedTuple

import numpy as np
from numba import njit

__all__ = [
    "SvdResult",
    "SpectralBounds",
    "SvdConvergenceError",
    "svd",
    "spectral_bounds",
]

# One-sided Jacobi settings: rotate until every off-diagonal Gram entry
# |a_i . a_j| falls below OFF_DIAG_TOL * ||a_i|| * ||a_j||.
OFF_DIAG_TOL = 1e-14
MAX_SWEEPS = 60
# Singular values below this fraction of sigma_max are reported as exactly 0.
SIGMA_ZERO_REL = 1e-12

POWER_TOL = 1e-8
POWER_MAX_ITER = 10_000
# mu estimates below this fraction of lambda_max are indistinguishable from 0
# at POWER_TOL accuracy and are reported as exactly 0.
MU_ZERO_REL = 1e-6


class SvdConvergenceError(RuntimeError):
    """Jacobi sweeps did not reach the off-diagonal tolerance within the cap."""


class SvdResult(NamedTuple):
    """Thin SVD ``x = u @ diag(singular_values) @ vt``.

    ``u`` is (m, d), ``vt`` is (d, q) with ``d = min(m, q)``;
    ``singular_values`` are nonincreasing and nonnegative.
    """

    u: np.ndarray
    singular_values: np.ndarray
    vt: np.ndarray


class SpectralBounds(NamedTuple):
    """Extreme Hessian eigenvalues of a quadratic objective.

    ``lipschitz`` is the gradient Lipschitz constant L = lambda_max(H) and
    ``strong_convexity`` is mu = lambda_min(H).
    """

    lipschitz: float
    strong_convexity: float


@njit(cache=True, nogil=True)
def _jacobi_sweeps(a, v, tol, max_sweeps):  # pragma: no cover - jitted
    m, q = a.shape
    for sweep in range(max_sweeps):
        rotated = 0
        for i in range(q - 1):
            for j in range(i + 1, q):
                alpha = 0.0
                beta = 0.0
                gamma = 0.0
                for k in range(m):
                    alpha += a[k, i] * a[k, i]
                    beta += a[k, j] * a[k, j]
                    gamma += a[k, i] * a[k, j]
                if gamma == 0.0 or abs(gamma) <= tol * np.sqrt(alpha * beta):
                    continue
                rotated += 1
                zeta = (beta - alpha) / (2.0 * gamma)
                if zeta >= 0.0:
                    t = 1.0 / (zeta + np.sqrt(1.0 + zeta * zeta))
                else:
                    t = -1.0 / (-zeta + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                for k in range(m):
                    tmp = a[k, i]
                    a[k, i] = c * tmp - s * a[k, j]
                    a[k, j] = s * tmp + c * a[k, j]
                for k in range(q):
                    tmp = v[k, i]
                    v[k, i] = c * tmp - s * v[k, j]
                    v[k, j] = s * tmp + c * v[k, j]
        if rotated == 0:
            return sweep
    return -1


def _as_matrix(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or min(x.shape) < 1:
        raise ValueError(f"expected a 2-D matrix with positive dimensions, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("matrix has non-finite entries")
    return x


def _complete_orthonormal(u: np.ndarray, n_good: int) -> None:
    # Fill columns n_good.. with vectors orthonormal to the existing ones
    # (needed when zero singular values leave u columns undefined).
    m, d = u.shape
    col = n_good
    k = 0
    while col < d and k < m:
        cand = np.zeros(m)
        cand[k] = 1.0
        k += 1
        cand -= u[:, :col] @ (u[:, :col].T @ cand)
        nrm = np.linalg.norm(cand)
        if nrm > 1e-8:
            u[:, col] = cand / nrm
            col += 1
    if col < d:
        raise RuntimeError("failed to complete an orthonormal basis")


def svd(x) -> SvdResult:
    """Thin singular value decomposition by one-sided Jacobi rotations.

    Deterministic for a fixed input. Designed for small dense matrices
    (target sizes up to ~200x200).

    Raises
    ------
    ValueError
        If the input has non-finite entries or is not a 2-D matrix.
    SvdConvergenceError
        If the off-diagonal tolerance is not reached within 60 sweeps.
    """
    x = _as_matrix(x)
    m, q = x.shape
    transposed = q > m
    a = (x.T if transposed else x).copy()
    rows, cols = a.shape
    v = np.eye(cols)
    sweeps = _jacobi_sweeps(a, v, OFF_DIAG_TOL, MAX_SWEEPS)
    if sweeps < 0:
        raise SvdConvergenceError(
            f"one-sided Jacobi SVD did not converge within {MAX_SWEEPS} sweeps"
        )
    sigma = np.sqrt(np.einsum("ij,ij->j", a, a))
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    a = a[:, order]
    v = v[:, order]
    if sigma[0] > 0.0:
        sigma[sigma < SIGMA_ZERO_REL * sigma[0]] = 0.0
    n_good = int(np.count_nonzero(sigma))
    u = np.zeros_like(a)
    if n_good:
        u[:, :n_good] = a[:, :n_good] / sigma[:n_good]
    _complete_orthonormal(u, n_good)
    if transposed:
        return SvdResult(u=v, singular_values=sigma, vt=u.T)
    return SvdResult(u=u, singular_values=sigma, vt=v.T)


def _power_iteration(h: np.ndarray, rng: np.random.Generator) -> float:
    # Largest eigenvalue of a symmetric PSD matrix via power iteration with
    # Rayleigh-quotient estimates; tolerance 1e-8 relative, cap 10_000.
    n = h.shape[0]
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    lam = float(v @ (h @ v))
    for _ in range(POWER_MAX_ITER):
        w = h @ v
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return 0.0
        v = w / nrm
        lam_new = float(v @ (h @ v))
        if abs(lam_new - lam) <= POWER_TOL * max(1.0, abs(lam_new)):
            return lam_new
        lam = lam_new
    warnings.warn("power iteration hit the 10000-iteration cap; returning current estimate")
    return lam


def spectral_bounds(objective) -> SpectralBounds:
    """Gradient Lipschitz constant and strong convexity modulus of a ridge
    least-squares objective.

    The Hessian of the loss is constant, ``H = 2((1/n) S^T S + ridge * I)``
    with samples as rows of S; its extreme eigenvalues are found by power
    iteration and a shifted power iteration. When ``ridge_lambda == 0`` and
    the data is rank deficient the strong convexity constant is reported as
    exactly 0 together with a warning.
    """
    h = objective.hessian_block()
    rng = np.random.default_rng(0x5EED)
    l_max = _power_iteration(h, rng)
    if l_max <= 0.0:
        warnings.warn("objective Hessian is zero; no strong convexity")
        return SpectralBounds(lipschitz=0.0, strong_convexity=0.0)
    shifted = l_max * np.eye(h.shape[0]) - h
    mu = l_max - _power_iteration(shifted, rng)
    if mu < MU_ZERO_REL * l_max:
        mu = 0.0
    if mu == 0.0 and objective.ridge_lambda == 0.0:
        warnings.warn(
            "objective is not strongly convex (ridge_lambda=0 and rank-deficient data)"
        )
    return SpectralBounds(lipschitz=l_max, strong_convexity=mu)
