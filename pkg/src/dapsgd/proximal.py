"""Regularizers h(x) and their proximal operators.

Four variants: L1, group lasso, simplified fused lasso (1-D total variation)
and nuclear norm. Each regularizer evaluates h(x) and the proximal map

    prox(x, eta) = argmin_y ||y - x||^2 / (2 eta) + h(y).

L1 and group lasso shrink in closed form, the fused lasso solves its
box-constrained dual by projected gradient descent, and the nuclear norm
soft-thresholds singular values from :mod:`dapsgd.linalg`.

``prox_oracle`` is an independent minimizer of the same objective used for
testing: projected subgradient descent with averaging followed by exact
coordinate/block refinement (vector variants) or an interior-point solve via
cvxpy (nuclear norm, where entrywise refinement can stall at rank-deficient
minimizers).

All operations are pure and thread-safe. Every ``prox`` call increments a
thread-local counter (:func:`prox_call_count`) so runtimes can prove which
thread evaluated proximal operators.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

__all__ = [
    "ProxSolveConfig",
    "ProxConvergenceError",
    "OracleConvergenceError",
    "L1",
    "GroupLasso",
    "FusedLasso",
    "NuclearNorm",
    "REGULARIZER_KINDS",
    "prox_objective",
    "prox_oracle",
    "subgradient_bound",
    "prox_call_count",
]


@dataclass(frozen=True)
class ProxSolveConfig:
    """Controls for iterative prox subproblems (currently the fused-lasso dual)."""

    dual_tolerance: float = 1e-10
    dual_max_iterations: int = 100_000

    def __post_init__(self):
        if self.dual_tolerance <= 0:
            raise ValueError("dual_tolerance must be positive")
        if self.dual_max_iterations < 1:
            raise ValueError("dual_max_iterations must be >= 1")


DEFAULT_PROX_CONFIG = ProxSolveConfig()


class ProxConvergenceError(RuntimeError):
    """An iterative prox subproblem missed its tolerance within the cap."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


class OracleConvergenceError(RuntimeError):
    """prox_oracle exhausted its budget before reaching stationarity."""


_thread_stats = threading.local()


def _count_prox_call() -> None:
    _thread_stats.calls = prox_call_count() + 1


def prox_call_count() -> int:
    """Number of prox evaluations performed by the calling thread."""
    return getattr(_thread_stats, "calls", 0)


def _check_vector(x, expected_len=None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError(f"expected a flat vector, got shape {x.shape}")
    if expected_len is not None and x.shape[0] != expected_len:
        raise ValueError(f"expected a vector of length {expected_len}, got {x.shape[0]}")
    return x


def _check_eta(eta: float) -> float:
    eta = float(eta)
    if eta <= 0:
        raise ValueError("eta must be positive")
    return eta


@dataclass(frozen=True)
class L1:
    """h(x) = lam * ||x||_1."""

    lam: float

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("lam must be positive")

    def check(self, x) -> np.ndarray:
        return _check_vector(x)

    def value(self, x) -> float:
        return self.lam * float(np.sum(np.abs(self.check(x))))

    def prox(self, x, eta, cfg: ProxSolveConfig | None = None) -> np.ndarray:
        _count_prox_call()
        x = self.check(x)
        t = _check_eta(eta) * self.lam
        return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


@dataclass(frozen=True)
class GroupLasso:
    """h(x) = lam * sum_g ||x_g||_2 over contiguous groups.

    ``boundaries`` are 0-based offsets 0 = b_0 < ... < b_g = m; group g
    is the slice x[b_g : b_{g+1}].
    """

    lam: float
    boundaries: tuple

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("lam must be positive")
        b = tuple(int(v) for v in self.boundaries)
        if len(b) < 2 or b[0] != 0 or any(b[i] >= b[i + 1] for i in range(len(b) - 1)):
            raise ValueError(
                "boundaries must be strictly increasing offsets starting at 0 and ending at m"
            )
        object.__setattr__(self, "boundaries", b)

    @property
    def n_groups(self) -> int:
        return len(self.boundaries) - 1

    def groups(self):
        b = self.boundaries
        return [slice(b[i], b[i + 1]) for i in range(self.n_groups)]

    def check(self, x) -> np.ndarray:
        return _check_vector(x, self.boundaries[-1])

    def value(self, x) -> float:
        x = self.check(x)
        return self.lam * float(sum(np.linalg.norm(x[g]) for g in self.groups()))

    def prox(self, x, eta, cfg: ProxSolveConfig | None = None) -> np.ndarray:
        _count_prox_call()
        x = self.check(x)
        t = _check_eta(eta) * self.lam
        out = np.empty_like(x)
        for g in self.groups():
            nrm = float(np.linalg.norm(x[g]))
            scale = 0.0 if nrm <= t else 1.0 - t / nrm
            out[g] = scale * x[g]
        return out


def _tv_adjoint(z: np.ndarray) -> np.ndarray:
    # R^T z for the (m-1) x m forward-difference matrix R.
    out = np.empty(z.shape[0] + 1)
    out[0] = z[0]
    out[1:-1] = z[1:] - z[:-1]
    out[-1] = -z[-1]
    return out


def _tv_forward(v: np.ndarray) -> np.ndarray:
    # R v: adjacent differences v_i - v_{i+1}.
    return v[:-1] - v[1:]


@dataclass(frozen=True)
class FusedLasso:
    """h(x) = lam * sum_i |x_i - x_{i+1}| (simplified fused lasso / 1-D TV)."""

    lam: float

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("lam must be positive")

    def check(self, x) -> np.ndarray:
        return _check_vector(x)

    def value(self, x) -> float:
        x = self.check(x)
        return self.lam * float(np.sum(np.abs(_tv_forward(x)))) if x.shape[0] > 1 else 0.0

    def prox(self, x, eta, cfg: ProxSolveConfig | None = None) -> np.ndarray:
        """Solve the box-constrained dual

            z* = argmin_{||z||_inf <= eta*lam} 0.5 ||R^T z||^2 - <R^T z, x>

        by projected gradient descent with fixed step 1/4 (the eigenvalues of
        R R^T are bounded by 4), then return x - R^T z*. Stops when the
        fixed-point residual ||z - clip(z - step*grad)|| / step drops below
        ``cfg.dual_tolerance``.
        """
        _count_prox_call()
        cfg = cfg or DEFAULT_PROX_CONFIG
        x = self.check(x)
        eta = _check_eta(eta)
        if x.shape[0] == 1:
            return x.copy()
        bound = eta * self.lam
        step = 0.25
        z = np.zeros(x.shape[0] - 1)
        residual = math.inf
        for _ in range(cfg.dual_max_iterations):
            grad = _tv_forward(_tv_adjoint(z) - x)
            z_next = np.clip(z - step * grad, -bound, bound)
            residual = float(np.linalg.norm(z_next - z)) / step
            z = z_next
            if residual <= cfg.dual_tolerance:
                return x - _tv_adjoint(z)
        raise ProxConvergenceError(
            f"fused-lasso dual did not reach tolerance {cfg.dual_tolerance:g} within "
            f"{cfg.dual_max_iterations} iterations (residual {residual:g})",
            residual=residual,
        )


@dataclass(frozen=True)
class NuclearNorm:
    """h(X) = lam * ||X||_* for an m x q matrix parameter stored as the
    row-major flattening of length rows*cols."""

    lam: float
    rows: int
    cols: int

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("lam must be positive")
        if self.rows < 1 or self.cols < 1:
            raise ValueError("rows and cols must be >= 1")

    def check(self, x) -> np.ndarray:
        return _check_vector(x, self.rows * self.cols)

    def as_matrix(self, x) -> np.ndarray:
        return self.check(x).reshape(self.rows, self.cols)

    def value(self, x) -> float:
        from . import linalg

        return self.lam * float(np.sum(linalg.svd(self.as_matrix(x)).singular_values))

    def prox(self, x, eta, cfg: ProxSolveConfig | None = None) -> np.ndarray:
        """Singular value thresholding: keep the singular vectors, replace
        each singular value by max(sigma - eta*lam, 0)."""
        from . import linalg

        _count_prox_call()
        t = _check_eta(eta) * self.lam
        u, sigma, vt = linalg.svd(self.as_matrix(x))
        shrunk = np.maximum(sigma - t, 0.0)
        return ((u * shrunk) @ vt).ravel()


REGULARIZER_KINDS = {
    "l1": L1,
    "group_lasso": GroupLasso,
    "fused_lasso": FusedLasso,
    "nuclear_norm": NuclearNorm,
}


def subgradient_bound(reg, m: int) -> float:
    """Constant upper bound on ||partial h(x)||_2 for a length-m parameter:
    lam*m (L1), lam*g (group lasso), lam*sqrt(2)*m*(m-1) (fused lasso),
    lam*(d^2 + d) with d = min(rows, cols) (nuclear norm)."""
    if m < 1:
        raise ValueError("m must be >= 1")
    if isinstance(reg, L1):
        return reg.lam * m
    if isinstance(reg, GroupLasso):
        if m != reg.boundaries[-1]:
            raise ValueError(f"m={m} does not match group boundaries ending at {reg.boundaries[-1]}")
        return reg.lam * reg.n_groups
    if isinstance(reg, FusedLasso):
        return reg.lam * math.sqrt(2.0) * m * (m - 1)
    if isinstance(reg, NuclearNorm):
        if m != reg.rows * reg.cols:
            raise ValueError(f"m={m} does not match matrix size {reg.rows}x{reg.cols}")
        d = min(reg.rows, reg.cols)
        return reg.lam * (d * d + d)
    raise TypeError(f"unknown regularizer {type(reg).__name__}")


def prox_objective(reg, x, eta, y) -> float:
    """The prox objective ||y - x||^2 / (2 eta) + h(y)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    diff = y - x
    return float(diff @ diff) / (2.0 * eta) + reg.value(y)


def _subgradient_h(reg, y: np.ndarray) -> np.ndarray:
    # Any subgradient of h at y (the 0 element is chosen at kinks).
    if isinstance(reg, L1):
        return reg.lam * np.sign(y)
    if isinstance(reg, GroupLasso):
        g = np.zeros_like(y)
        for sl in reg.groups():
            nrm = float(np.linalg.norm(y[sl]))
            if nrm > 0:
                g[sl] = reg.lam * y[sl] / nrm
        return g
    if isinstance(reg, FusedLasso):
        if y.shape[0] == 1:
            return np.zeros_like(y)
        return reg.lam * _tv_adjoint(np.sign(_tv_forward(y)))
    if isinstance(reg, NuclearNorm):
        # numpy's SVD on purpose: keeps the oracle route independent of
        # the Jacobi SVD used by NuclearNorm.prox.
        mat = y.reshape(reg.rows, reg.cols)
        u, _, vt = np.linalg.svd(mat, full_matrices=False)
        return reg.lam * (u @ vt).ravel()
    raise TypeError(f"unknown regularizer {type(reg).__name__}")


def _oracle_subgradient_phase(reg, x, eta, iterations):
    # Subgradient descent with (k+1)-weighted averaging on the 1/eta-strongly
    # convex prox objective; returns the best of the average, the best
    # visited point and the start.
    y = x.copy()
    best = y.copy()
    best_val = prox_objective(reg, x, eta, y)
    acc = np.zeros_like(y)
    wsum = 0.0
    for k in range(iterations):
        g = (y - x) / eta + _subgradient_h(reg, y)
        y = y - (2.0 * eta / (k + 2.0)) * g
        w = k + 1.0
        acc += w * y
        wsum += w
        val = prox_objective(reg, x, eta, y)
        if val < best_val:
            best_val = val
            best = y.copy()
    if wsum > 0:
        avg = acc / wsum
        if prox_objective(reg, x, eta, avg) < best_val:
            best = avg
            best_val = prox_objective(reg, x, eta, avg)
    return best, best_val


def _coordinate_candidates(reg, y, x, eta, j):
    # Candidate values for minimizing the prox objective along coordinate j.
    xj = x[j]
    if isinstance(reg, L1):
        t = eta * reg.lam
        return [0.0, max(0.0, xj - t), min(0.0, xj + t)]
    if isinstance(reg, GroupLasso):
        t = eta * reg.lam
        sl = next(s for s in reg.groups() if s.start <= j < s.stop)
        rest = float(np.linalg.norm(y[sl]) ** 2 - y[j] ** 2)
        rest = max(rest, 0.0)
        if rest <= 1e-300:
            return [0.0, max(0.0, xj - t), min(0.0, xj + t)]
        c = math.sqrt(rest)

        def dphi(v):
            return (v - xj) / eta + reg.lam * v / math.sqrt(v * v + c * c)

        lo, hi = (0.0, xj) if xj >= 0 else (xj, 0.0)
        if dphi(lo) == 0.0:
            return [lo]
        if dphi(hi) == 0.0:
            return [hi]
        if dphi(lo) * dphi(hi) > 0:
            return [xj]
        return [float(brentq(dphi, lo, hi, xtol=1e-14))]
    if isinstance(reg, FusedLasso):
        lam = reg.lam
        m = y.shape[0]
        breaks = []
        if j > 0:
            breaks.append(y[j - 1])
        if j < m - 1:
            breaks.append(y[j + 1])
        cands = list(breaks)
        pieces = sorted(breaks)
        # per linear piece, vertex of the quadratic with the piece's TV slope
        edges = [-math.inf] + pieces + [math.inf]
        for lo, hi in zip(edges[:-1], edges[1:]):
            mid = 0.0
            if math.isfinite(lo) and math.isfinite(hi):
                mid = 0.5 * (lo + hi)
            elif math.isfinite(lo):
                mid = lo + 1.0
            elif math.isfinite(hi):
                mid = hi - 1.0
            slope = 0.0
            if j > 0:
                slope += lam * (1.0 if mid > y[j - 1] else -1.0)
            if j < m - 1:
                slope += lam * (1.0 if mid > y[j + 1] else -1.0)
            v = xj - eta * slope
            if lo < v < hi:
                cands.append(v)
        return cands
    raise TypeError(f"no coordinate candidates for {type(reg).__name__}")


def _block_moves(reg, y, x, eta):
    # Structured refinement moves beyond single coordinates: candidate new
    # points (full vectors) for group rays / fused contiguous-block shifts.
    out = []
    if isinstance(reg, GroupLasso):
        t = eta * reg.lam
        for sl in reg.groups():
            # zero the group
            cand = y.copy()
            cand[sl] = 0.0
            out.append(cand)
            xg = x[sl]
            nx = float(np.linalg.norm(xg))
            if np.all(y[sl] == 0.0):
                # escape ray towards x_g
                if nx > t:
                    cand = y.copy()
                    cand[sl] = (1.0 - t / nx) * xg
                    out.append(cand)
            else:
                # rescale the group along its own ray: minimize over c of
                # ||c y_g - x_g||^2/(2 eta) + lam |c| ||y_g||
                yg = y[sl]
                ny2 = float(yg @ yg)
                dot = float(yg @ xg)
                nyg = math.sqrt(ny2)
                for c in (
                    (dot - t * nyg) / ny2,
                    (dot + t * nyg) / ny2,
                    0.0,
                ):
                    cand = y.copy()
                    cand[sl] = c * yg
                    out.append(cand)
    elif isinstance(reg, FusedLasso):
        lam = reg.lam
        m = y.shape[0]
        for i in range(m):
            for j in range(i, m):
                size = j - i + 1
                c2 = size / (2.0 * eta)
                c1 = float(np.sum(y[i : j + 1] - x[i : j + 1])) / eta
                breaks = []
                if i > 0:
                    breaks.append(y[i - 1] - y[i])
                if j < m - 1:
                    breaks.append(y[j + 1] - y[j])
                deltas = list(breaks)
                edges = [-math.inf] + sorted(breaks) + [math.inf]
                for lo, hi in zip(edges[:-1], edges[1:]):
                    mid = 0.0
                    if math.isfinite(lo) and math.isfinite(hi):
                        mid = 0.5 * (lo + hi)
                    elif math.isfinite(lo):
                        mid = lo + 1.0
                    elif math.isfinite(hi):
                        mid = hi - 1.0
                    slope = 0.0
                    if i > 0:
                        slope += lam * (1.0 if mid > y[i - 1] - y[i] else -1.0)
                    if j < m - 1:
                        slope += lam * (-1.0 if mid < y[j + 1] - y[j] else 1.0)
                    v = -(c1 + slope) / (2.0 * c2)
                    if lo < v < hi:
                        deltas.append(v)
                for delta in deltas:
                    if delta == 0.0:
                        continue
                    cand = y.copy()
                    cand[i : j + 1] += delta
                    out.append(cand)
    return out


def _oracle_refine_nuclear(reg: NuclearNorm, x, eta):
    import cvxpy as cp

    xm = x.reshape(reg.rows, reg.cols)
    ym = cp.Variable((reg.rows, reg.cols))
    problem = cp.Problem(
        cp.Minimize(cp.sum_squares(ym - xm) / (2.0 * eta) + reg.lam * cp.normNuc(ym))
    )
    problem.solve(solver="CLARABEL", tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12)
    if ym.value is None or problem.status not in ("optimal", "optimal_inaccurate"):
        raise OracleConvergenceError(f"cvxpy nuclear-norm solve failed: status {problem.status}")
    return np.asarray(ym.value).ravel()


def prox_oracle(reg, x, eta, budget: int = 200_000, rng=None) -> np.ndarray:
    """Independent approximate minimizer of the prox objective, for testing.

    Runs projected subgradient descent with averaging, then refines: exact
    single-coordinate and structured block moves for the vector variants, a
    cvxpy interior-point solve for the nuclear norm. ``budget`` counts
    optimization units (subgradient steps plus refinement line searches);
    the procedure is deterministic, ``rng`` is accepted for interface
    compatibility and unused.

    Raises :class:`OracleConvergenceError` if the budget is exhausted before
    the refinement stalls below 1e-7 on the objective.
    """
    x = reg.check(x)
    eta = _check_eta(eta)
    if budget < 1:
        raise ValueError("budget must be >= 1")
    spent = 0

    phase1 = min(300, budget)
    y, fy = _oracle_subgradient_phase(reg, x, eta, phase1)
    spent += phase1

    if isinstance(reg, NuclearNorm):
        refined = _oracle_refine_nuclear(reg, x, eta)
        if prox_objective(reg, x, eta, refined) <= fy:
            return refined
        return y

    scale = max(1.0, abs(fy))
    improvement = math.inf
    while spent < budget:
        f_start = fy
        m = x.shape[0]
        for j in range(m):
            base = y[j]
            best_v, best_f = base, fy
            for v in _coordinate_candidates(reg, y, x, eta, j):
                y[j] = v
                f = prox_objective(reg, x, eta, y)
                if f < best_f:
                    best_v, best_f = v, f
            y[j] = best_v
            fy = best_f
            spent += 1
            if spent >= budget:
                break
        for cand in _block_moves(reg, y, x, eta):
            f = prox_objective(reg, x, eta, cand)
            spent += 1
            if f < fy:
                y, fy = cand, f
            if spent >= budget:
                break
        improvement = f_start - fy
        if improvement <= 1e-13 * scale:
            return y
    if improvement > 1e-7 * scale:
        raise OracleConvergenceError(
            f"prox_oracle budget {budget} exhausted before stationarity "
            f"(last sweep improved the objective by {improvement:g})"
        )
    return y
