"""Single-step recursions, step-size schedules and the reference solver.

Three update rules operate on flat parameter vectors:

* ``psgd_step``             -- x ← prox(x − η·∇f_i(x))
* ``tap_master_step``       -- prox applied by the master to a delayed gradient
* ``dap_worker_innovation`` / ``dap_master_step`` -- the decoupled split where
  the worker evaluates the prox and the master only adds.

All step functions are pure; ``solve_reference`` is a deterministic
full-gradient proximal descent used to produce the optimum x* that traces
are measured against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .linalg import spectral_bounds

__all__ = [
    "DiminishingTheorem1",
    "ConstantTheorem2",
    "Reciprocal",
    "ScheduleError",
    "ReferenceSolveError",
    "check_admissible",
    "default_diminishing",
    "default_constant",
    "psgd_step",
    "tap_master_step",
    "dap_worker_innovation",
    "dap_master_step",
    "running_average",
    "gradient_mapping_norm",
    "solve_reference",
]


class ScheduleError(ValueError):
    """A step-size schedule violates its admissibility conditions."""


class ReferenceSolveError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class DiminishingTheorem1:
    """eta_t = 1 / (mu*(t+1) + u); admissible for delay bound tau when
    u > (2*tau - 1)*mu, and eta_0 <= 1/L when L is known."""

    mu: float
    u: float

    def __post_init__(self):
        if self.mu <= 0 or self.u <= 0:
            raise ValueError("mu and u must be positive")

    def eta(self, t: int) -> float:
        return 1.0 / (self.mu * (t + 1) + self.u)


@dataclass(frozen=True)
class ConstantTheorem2:
    """eta_t = 1 / (v * sqrt(T)) for a fixed horizon T."""

    v: float
    total_iterations: int

    def __post_init__(self):
        if self.v <= 0:
            raise ValueError("v must be positive")
        if self.total_iterations < 1:
            raise ValueError("total_iterations must be >= 1")

    def eta(self, t: int) -> float:
        return 1.0 / (self.v * math.sqrt(self.total_iterations))


@dataclass(frozen=True)
class Reciprocal:
    """eta_t = 1 / (a + b*t), the explicit experiment-style schedule."""

    a: float
    b: float

    def __post_init__(self):
        if self.a <= 0:
            raise ValueError("a must be positive")
        if self.b < 0:
            raise ValueError("b must be nonnegative")

    def eta(self, t: int) -> float:
        return 1.0 / (self.a + self.b * t)


def check_admissible(schedule, tau: int, lipschitz: float | None = None) -> None:
    """Raise :class:`ScheduleError` if the schedule is not admissible for the
    delay bound ``tau`` (and step sizes exceed 1/L when L is supplied)."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    if isinstance(schedule, DiminishingTheorem1):
        if not schedule.u > (2 * tau - 1) * schedule.mu:
            raise ScheduleError(
                f"diminishing schedule needs u > (2*tau-1)*mu = {(2 * tau - 1) * schedule.mu:g}, "
                f"got u = {schedule.u:g} for tau = {tau}"
            )
    if lipschitz is not None and lipschitz > 0:
        eta0 = schedule.eta(0)
        if eta0 > 1.0 / lipschitz * (1 + 1e-12):
            raise ScheduleError(
                f"eta_0 = {eta0:g} exceeds 1/L = {1.0 / lipschitz:g}"
            )


def default_diminishing(mu: float, lipschitz: float, tau: int) -> DiminishingTheorem1:
    """Smallest u satisfying u > (2*tau-1)*mu and eta_0 <= 1/L, doubled for
    margin."""
    u0 = max((2 * tau - 1) * mu, lipschitz - mu)
    u = 2.0 * u0 if u0 > 0 else mu
    return DiminishingTheorem1(mu=mu, u=u)


def default_constant(lipschitz: float, total_iterations: int) -> ConstantTheorem2:
    """v = L, so eta = 1/(L*sqrt(T)) <= 1/L for any horizon."""
    return ConstantTheorem2(v=lipschitz, total_iterations=total_iterations)


def psgd_step(x, grad, eta: float, reg, cfg=None) -> np.ndarray:
    """One proximal stochastic gradient step prox(x − η·grad).

    ``reg=None`` means h ≡ 0 (the prox is the identity)."""
    z = x - eta * grad
    return reg.prox(z, eta, cfg) if reg is not None else z


def tap_master_step(x_t, delayed_grad, eta_t: float, reg, cfg=None) -> np.ndarray:
    """Master update of the coupled asynchronous recursion: the prox is
    evaluated at the master with the current step size and a delayed
    gradient."""
    return psgd_step(x_t, delayed_grad, eta_t, reg, cfg)


def dap_worker_innovation(x_snapshot, eta: float, sample_grad, reg, cfg=None) -> np.ndarray:
    """Worker-side update information Δ = prox(x − η·g) − x."""
    return psgd_step(x_snapshot, sample_grad, eta, reg, cfg) - x_snapshot


def dap_master_step(x_t, x_prime, x_snapshot) -> np.ndarray:
    """Decoupled master update x_{t+1} = x_t + x' − x_snapshot.

    Element-wise additions only, never a prox: this is the decoupling
    contract. Components unchanged since the snapshot take the exact path
    (the update there is just x'), which makes the zero-delay case collapse
    bitwise onto the synchronous recursion.
    """
    return np.where(x_snapshot == x_t, x_prime, x_t + (x_prime - x_snapshot))


def running_average(iterates) -> np.ndarray:
    """Arithmetic mean of the iterates x_0..x_T (the ergodic average)."""
    iterates = list(iterates)
    if not iterates:
        raise ValueError("need at least one iterate")
    acc = np.zeros_like(np.asarray(iterates[0], dtype=float))
    for x in iterates:
        acc += x
    return acc / len(iterates)


def gradient_mapping_norm(ds, reg, x, eta: float, cfg=None) -> float:
    """Stationarity residual ||x − prox(x − η∇f(x))|| / η of the composite
    objective."""
    x = np.asarray(x, dtype=float)
    step = psgd_step(x, ds.full_gradient(x), eta, reg, cfg)
    return float(np.linalg.norm(x - step)) / eta


def solve_reference(ds, reg, tol: float = 1e-10, cfg=None, max_iterations: int = 10_000_000):
    """High-accuracy minimizer of P = f + h by deterministic full-gradient
    proximal descent with step 1/L, stopped when the gradient-mapping norm
    falls below ``tol``.

    Requires strong convexity (ridge active or full-rank data); raises
    :class:`ReferenceSolveError` with the residual if the iteration cap is
    hit.
    """
    bounds = spectral_bounds(ds)
    if bounds.strong_convexity <= 0:
        raise ValueError(
            "reference solve needs a strongly convex objective (mu > 0); add ridge"
        )
    eta = 1.0 / bounds.lipschitz
    x = np.zeros(ds.parameter_length)
    residual = math.inf
    for _ in range(max_iterations):
        x_next = psgd_step(x, ds.full_gradient(x), eta, reg, cfg)
        residual = float(np.linalg.norm(x - x_next)) / eta
        x = x_next
        if residual <= tol:
            return x
    raise ReferenceSolveError(
        f"reference solver did not reach tol {tol:g} within {max_iterations} iterations "
        f"(residual {residual:g})",
        residual=residual,
    )
