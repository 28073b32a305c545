"""Bounded-delay execution of the three recursions.

Two runtimes produce the same trace/log types:

* :func:`simulate` -- a deterministic master-indexed replay: one event per
  master update, the delayed contribution recomputed from the stored
  historical iterate. Bitwise reproducible for a fixed delay-model seed.
* :func:`run_threads` -- a real shared-memory runtime: one master thread and
  S worker threads around a single exclusive lock, with a timing breakdown
  separating the master's critical-section time from worker compute.

The delay of every delivered update is bounded by the model's tau, and with
tau = 0 the three algorithms produce bitwise identical traces.
"""

from __future__ import annotations

import math
import queue
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from . import proximal, solvers

__all__ = [
    "PSGD",
    "TAP",
    "DAP",
    "UniformBounded",
    "WorkerQueue",
    "EventLog",
    "TraceRecord",
    "IterateTrace",
    "TimingBreakdown",
    "DelayBoundExceeded",
    "simulate",
    "replay",
    "run_threads",
    "measured_max_delay",
]

PSGD = "PSGD"
TAP = "TAP"
DAP = "DAP"
_ALGORITHMS = (PSGD, TAP, DAP)

KIND_GRADIENT = "gradient"
KIND_INNOVATION = "innovation"


class DelayBoundExceeded(RuntimeError):
    """A threaded run observed a delay beyond the admissible bound."""


@dataclass(frozen=True)
class UniformBounded:
    """d(t) drawn uniformly from [max(0, t - tau), t]."""

    tau: int
    seed: int = 0

    def __post_init__(self):
        if self.tau < 0:
            raise ValueError("tau must be nonnegative")

    def events(self, total_iterations: int, n_samples: int, sample_rng, delay_rng):
        for t in range(total_iterations):
            lo = max(0, t - self.tau)
            d = t if lo == t else int(delay_rng.integers(lo, t + 1))
            yield t, d, 0, int(sample_rng.integers(0, n_samples))


@dataclass(frozen=True)
class WorkerQueue:
    """S virtual workers, each holding one in-flight job; the scheduler
    delivers in a random order constrained so every delivered delay stays
    within tau = S.

    A delivery is eligible when the surviving jobs remain schedulable under
    the bound (the j-th oldest job's age may not exceed tau - j + 1);
    delivering the oldest job always is, so the eligible set is never empty.
    The delivered worker restarts from the post-update snapshot.
    """

    workers: int
    seed: int = 0

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    @property
    def tau(self) -> int:
        return self.workers

    def events(self, total_iterations: int, n_samples: int, sample_rng, delay_rng):
        tau = self.tau
        starts = [0] * self.workers
        for t in range(total_iterations):
            eligible = []
            for w in range(self.workers):
                ages = sorted(
                    (t + 1 - starts[v] for v in range(self.workers) if v != w),
                    reverse=True,
                )
                if all(age <= tau - j + 1 for j, age in enumerate(ages, start=1)):
                    eligible.append(w)
            w = eligible[int(delay_rng.integers(len(eligible)))]
            d = starts[w]
            starts[w] = t + 1
            yield t, d, w, int(sample_rng.integers(0, n_samples))


@dataclass(frozen=True)
class EventLog:
    """Per-master-update delivery records, ordered by t."""

    t: np.ndarray
    delay_source: np.ndarray
    worker: np.ndarray
    sample_index: np.ndarray
    kind: np.ndarray

    def __len__(self) -> int:
        return self.t.shape[0]

    def delays(self) -> np.ndarray:
        return self.t - self.delay_source


def measured_max_delay(log: EventLog) -> int:
    """Maximum observed staleness t - d(t) over the log."""
    if len(log) == 0:
        raise ValueError("event log is empty")
    return int(np.max(log.delays()))


@dataclass(frozen=True)
class TraceRecord:
    t: int
    eta: float
    delay_source: int
    distance_sq: float
    wall_nanos: int


@dataclass
class IterateTrace:
    """Per-run record: logged iterations plus final/ergodic summaries.

    Each record describes the update applied at master iteration t (its step
    size and delay source) and the squared distance of the resulting iterate
    to the reference. ``sum_distance_sq`` accumulates ||x_t - x*||^2 over all
    iterates x_0..x_T, which upper-bounds the ergodic distance by Jensen's
    inequality. Simulated runs store wall_nanos = 0 so traces are bitwise
    reproducible.
    """

    records: list = field(default_factory=list)
    final_iterate: np.ndarray | None = None
    running_average: np.ndarray | None = None
    initial_distance_sq: float = 0.0
    sum_distance_sq: float = 0.0
    iterate_count: int = 0

    @property
    def final_distance_sq(self) -> float:
        return self.records[-1].distance_sq

    @property
    def jensen_upper_bound(self) -> float:
        return self.sum_distance_sq / self.iterate_count


@dataclass(frozen=True)
class TimingBreakdown:
    """Where a threaded run spent its time, plus master-side call counters."""

    total_nanos: int
    master_lock_nanos: int
    master_prox_calls: int
    worker_compute_nanos: tuple
    iterations: int

    @property
    def per_iteration_master_nanos(self) -> float:
        return self.master_lock_nanos / self.iterations

    @property
    def master_critical_share(self) -> float:
        return self.master_lock_nanos / self.total_nanos


def _check_algorithm(algorithm: str) -> str:
    if algorithm not in _ALGORITHMS:
        raise ValueError(f"algorithm must be one of {_ALGORITHMS}, got {algorithm!r}")
    return algorithm


def _master_loop(
    algorithm,
    ds,
    reg,
    schedule,
    events,
    total_iterations,
    window_size,
    prox_cfg,
    reference,
    log_every,
    kind,
    wall_clock=None,
):
    # Deterministic master-indexed loop shared by simulate() and replay().
    reference = np.asarray(reference, dtype=float)
    x = np.zeros(ds.parameter_length)
    window = [x] * window_size

    records = []
    ev_t = np.empty(total_iterations, dtype=np.int64)
    ev_d = np.empty(total_iterations, dtype=np.int64)
    ev_w = np.empty(total_iterations, dtype=np.int32)
    ev_i = np.empty(total_iterations, dtype=np.int64)

    diff0 = x - reference
    dist = float(diff0 @ diff0)
    trace = IterateTrace(initial_distance_sq=dist, sum_distance_sq=dist, iterate_count=1)
    run_sum = x.copy()

    for t, d, worker, i in events:
        if not 0 <= t - d <= window_size - 1:
            raise RuntimeError(f"delay {t - d} at t={t} exceeds the retained window")
        x_d = window[d % window_size]
        if algorithm == PSGD:
            eta_used = schedule.eta(t)
            grad = ds.sample_gradient(x, i)
            x = solvers.psgd_step(x, grad, eta_used, reg, prox_cfg)
        elif algorithm == TAP:
            eta_used = schedule.eta(t)
            grad = ds.sample_gradient(x_d, i)
            x = solvers.tap_master_step(x, grad, eta_used, reg, prox_cfg)
        else:
            eta_used = schedule.eta(d)
            grad = ds.sample_gradient(x_d, i)
            x_prime = solvers.psgd_step(x_d, grad, eta_used, reg, prox_cfg)
            x = solvers.dap_master_step(x, x_prime, x_d)
        window[(t + 1) % window_size] = x
        run_sum += x
        diff = x - reference
        dist = float(diff @ diff)
        trace.sum_distance_sq += dist
        trace.iterate_count += 1
        ev_t[t] = t
        ev_d[t] = d
        ev_w[t] = worker
        ev_i[t] = i
        if t % log_every == 0 or t == total_iterations - 1:
            wall = 0 if wall_clock is None else wall_clock()
            records.append(TraceRecord(t, eta_used, d, dist, wall))

    trace.records = records
    trace.final_iterate = x
    trace.running_average = run_sum / trace.iterate_count
    log = EventLog(
        t=ev_t,
        delay_source=ev_d,
        worker=ev_w,
        sample_index=ev_i,
        kind=np.full(total_iterations, kind, dtype="<U10"),
    )
    return trace, log


def simulate(
    algorithm,
    ds,
    reg,
    schedule,
    delay,
    total_iterations,
    prox_cfg=None,
    reference=None,
    log_every: int = 100,
):
    """Deterministic single-threaded replay of the master recursion.

    One event per master update: the delay model picks d(t) and the worker
    contribution is recomputed from the stored iterate x_{d(t)} (the last
    tau+1 iterates are retained). The run seed is the delay model's seed;
    sample indices and delays come from separate child streams, so runs with
    the same config and seed are bitwise identical.
    """
    _check_algorithm(algorithm)
    if total_iterations < 1:
        raise ValueError("total_iterations must be >= 1")
    if reference is None:
        raise ValueError("reference solution is required (use solvers.solve_reference)")
    solvers.check_admissible(schedule, delay.tau)
    sample_rng, delay_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(delay.seed).spawn(2)
    )
    events = delay.events(total_iterations, ds.n_samples, sample_rng, delay_rng)
    kind = KIND_INNOVATION if algorithm == DAP else KIND_GRADIENT
    return _master_loop(
        algorithm,
        ds,
        reg,
        schedule,
        events,
        total_iterations,
        delay.tau + 1,
        prox_cfg,
        reference,
        log_every,
        kind,
    )


def replay(
    algorithm,
    ds,
    reg,
    schedule,
    log: EventLog,
    prox_cfg=None,
    reference=None,
    log_every: int = 100,
):
    """Re-run the master recursion against a recorded event log (delays and
    sample indices taken verbatim). Threaded runs replayed this way
    reproduce their iterate sequence exactly."""
    _check_algorithm(algorithm)
    if len(log) == 0:
        raise ValueError("event log is empty")
    if reference is None:
        raise ValueError("reference solution is required")
    window = measured_max_delay(log) + 1
    events = zip(log.t.tolist(), log.delay_source.tolist(), log.worker.tolist(), log.sample_index.tolist())
    kind = KIND_INNOVATION if algorithm == DAP else KIND_GRADIENT
    return _master_loop(
        algorithm,
        ds,
        reg,
        schedule,
        events,
        len(log),
        window,
        prox_cfg,
        reference,
        log_every,
        kind,
    )


def _admissible_delay_bound(schedule) -> int | None:
    # Largest tau for which the schedule's guarantee still holds.
    if isinstance(schedule, solvers.DiminishingTheorem1):
        # u > (2*tau - 1)*mu  <=>  tau < (u/mu + 1)/2
        limit = (schedule.u / schedule.mu + 1.0) / 2.0
        bound = int(math.ceil(limit) - 1)
        return max(bound, 0)
    return None


def run_threads(
    algorithm,
    ds,
    reg,
    schedule,
    workers: int,
    total_iterations: int,
    prox_cfg=None,
    reference=None,
    log_every: int = 100,
    seed: int = 0,
    max_delay: int | None = None,
):
    """Shared-memory asynchronous run: S worker threads around one exclusive
    parameter lock, master applies exactly ``total_iterations`` updates.

    Workers loop {sample, read snapshot under the lock, compute, deliver};
    each worker keeps a single job in flight (it waits until its delivery is
    applied before reading again). TAP masters run the prox inside the lock;
    DAP masters only add. Delivered delays are measured, and the run aborts
    with :class:`DelayBoundExceeded` if one exceeds ``max_delay`` (defaults
    to the schedule's admissible bound when that is derivable).

    Returns ``(trace, log, timing)``.
    """
    if algorithm not in (TAP, DAP):
        raise ValueError("threaded runtime supports TAP and DAP")
    if workers < 1:
        raise ValueError("workers must be >= 1")
    if total_iterations < 1:
        raise ValueError("total_iterations must be >= 1")
    if reference is None:
        raise ValueError("reference solution is required")
    if max_delay is None:
        max_delay = _admissible_delay_bound(schedule)
    if max_delay is not None:
        solvers.check_admissible(schedule, max_delay)

    reference = np.asarray(reference, dtype=float)
    n = ds.n_samples
    state = {"x": np.zeros(ds.parameter_length), "version": 0}
    lock = threading.Lock()
    deliveries = queue.SimpleQueue()
    applied = [threading.Event() for _ in range(workers)]
    stop = threading.Event()
    worker_ns = [0] * workers
    worker_errors = []
    seeds = np.random.SeedSequence(seed).spawn(workers)

    def worker_main(w: int, rng: np.random.Generator):
        try:
            while not stop.is_set():
                with lock:
                    snap = state["x"]
                    v = state["version"]
                t0 = time.perf_counter_ns()
                i = int(rng.integers(0, n))
                if algorithm == TAP:
                    payload = ds.sample_gradient(snap, i)
                else:
                    eta = schedule.eta(v)
                    grad = ds.sample_gradient(snap, i)
                    payload = solvers.psgd_step(snap, grad, eta, reg, prox_cfg)
                worker_ns[w] += time.perf_counter_ns() - t0
                applied[w].clear()
                deliveries.put((w, v, i, payload, snap))
                applied[w].wait()
        except Exception as exc:  # surfaced by the master
            worker_errors.append(exc)
            stop.set()
            deliveries.put(None)

    threads = [
        threading.Thread(target=worker_main, args=(w, np.random.default_rng(s)), daemon=True)
        for w, s in enumerate(seeds)
    ]

    records = []
    ev_t = np.empty(total_iterations, dtype=np.int64)
    ev_d = np.empty(total_iterations, dtype=np.int64)
    ev_w = np.empty(total_iterations, dtype=np.int32)
    ev_i = np.empty(total_iterations, dtype=np.int64)
    kind = KIND_INNOVATION if algorithm == DAP else KIND_GRADIENT

    diff0 = state["x"] - reference
    dist = float(diff0 @ diff0)
    trace = IterateTrace(initial_distance_sq=dist, sum_distance_sq=dist, iterate_count=1)
    run_sum = state["x"].copy()

    prox_calls_before = proximal.prox_call_count()
    master_lock_ns = 0
    start_ns = time.perf_counter_ns()
    delay_violation = None

    for th in threads:
        th.start()
    try:
        for t in range(total_iterations):
            item = deliveries.get()
            if item is None:
                raise worker_errors[0]
            w, v, i, payload, snap = item
            delay_t = t - v
            if max_delay is not None and delay_t > max_delay:
                delay_violation = (t, delay_t)
                break
            t0 = time.perf_counter_ns()
            with lock:
                if algorithm == TAP:
                    x_new = solvers.tap_master_step(state["x"], payload, schedule.eta(t), reg, prox_cfg)
                else:
                    x_new = solvers.dap_master_step(state["x"], payload, snap)
                state["x"] = x_new
                state["version"] = t + 1
            master_lock_ns += time.perf_counter_ns() - t0
            applied[w].set()
            run_sum += x_new
            diff = x_new - reference
            dist = float(diff @ diff)
            trace.sum_distance_sq += dist
            trace.iterate_count += 1
            ev_t[t] = t
            ev_d[t] = v
            ev_w[t] = w
            ev_i[t] = i
            if t % log_every == 0 or t == total_iterations - 1:
                eta_used = schedule.eta(v) if algorithm == DAP else schedule.eta(t)
                records.append(
                    TraceRecord(t, eta_used, v, dist, time.perf_counter_ns() - start_ns)
                )
    finally:
        stop.set()
        for ev in applied:
            ev.set()
        for th in threads:
            th.join(timeout=30)

    if delay_violation is not None:
        t_bad, d_bad = delay_violation
        raise DelayBoundExceeded(
            f"observed delay {d_bad} at master iteration {t_bad} exceeds the "
            f"admissible bound {max_delay}; the schedule's tau guarantee is void"
        )

    total_ns = time.perf_counter_ns() - start_ns
    trace.records = records
    trace.final_iterate = state["x"]
    trace.running_average = run_sum / trace.iterate_count
    log = EventLog(
        t=ev_t,
        delay_source=ev_d,
        worker=ev_w,
        sample_index=ev_i,
        kind=np.full(total_iterations, kind, dtype="<U10"),
    )
    timing = TimingBreakdown(
        total_nanos=total_ns,
        master_lock_nanos=master_lock_ns,
        master_prox_calls=proximal.prox_call_count() - prox_calls_before,
        worker_compute_nanos=tuple(worker_ns),
        iterations=total_iterations,
    )
    return trace, log, timing
