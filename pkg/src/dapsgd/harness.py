"""Experiment orchestration: JSON configs, reference caching, CSV/JSON output.

A config describes one problem (synthetic or a dataset CSV), one regularizer,
a step schedule, a delay/worker model and the algorithms and seeds to run.
Convergence experiments run the deterministic simulator; speedup experiments
run the threaded runtime over a list of worker counts. The reference optimum
is computed once per problem, cached on disk keyed by a digest of the
problem definition, and revalidated (gradient-mapping norm) before reuse.

Trace CSV header: ``algorithm,seed,t,wall_nanos,distance_sq,log_distance_sq``
(natural log). Identical configs and seeds reproduce identical CSV bytes in
simulation mode.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import objective, proximal, runtime, solvers
from .linalg import spectral_bounds

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "RunRecord",
    "load_config",
    "build_regularizer",
    "build_dataset",
    "reference_for",
    "run_convergence_experiment",
    "run_speedup_experiment",
    "TRACE_HEADER",
    "SPEEDUP_HEADER",
]

TRACE_HEADER = "algorithm,seed,t,wall_nanos,distance_sq,log_distance_sq"
SPEEDUP_HEADER = "algorithm,regularizer,workers,wall_seconds,speedup,master_critical_share"


class ConfigError(ValueError):
    """A config file failed to parse or validate; the message names the field."""


def _require(mapping: dict, key: str, context: str):
    if key not in mapping:
        raise ConfigError(f"{context}: missing required field '{key}'")
    return mapping[key]


@dataclass(frozen=True)
class ExperimentConfig:
    problem: dict
    regularizer: dict
    algorithms: tuple
    schedule: dict
    delay: dict
    total_iterations: int
    seeds: tuple
    log_every: int = 100
    prox: dict = field(default_factory=dict)
    reference_tolerance: float = 1e-10

    def __post_init__(self):
        if not self.algorithms:
            raise ConfigError("config: at least one algorithm is required")
        for a in self.algorithms:
            if a not in (runtime.PSGD, runtime.TAP, runtime.DAP):
                raise ConfigError(f"config field 'algorithms': unknown algorithm {a!r}")
        if not self.seeds:
            raise ConfigError("config: at least one seed is required")
        if self.total_iterations < 1:
            raise ConfigError("config field 'total_iterations': must be >= 1")
        if self.log_every < 1:
            raise ConfigError("config field 'log_every': must be >= 1")


@dataclass
class RunRecord:
    """Summary of one experiment: per-(algorithm, seed) trace digests."""

    config_digest: str
    runs: list = field(default_factory=list)


def parse_config(raw: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig(
            problem=dict(_require(raw, "problem", "config")),
            regularizer=dict(_require(raw, "regularizer", "config")),
            algorithms=tuple(_require(raw, "algorithms", "config")),
            schedule=dict(_require(raw, "schedule", "config")),
            delay=dict(_require(raw, "delay", "config")),
            total_iterations=int(_require(raw, "total_iterations", "config")),
            seeds=tuple(int(s) for s in _require(raw, "seeds", "config")),
            log_every=int(raw.get("log_every", 100)),
            prox=dict(raw.get("prox", {})),
            reference_tolerance=float(raw.get("reference_tolerance", 1e-10)),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"config: {exc}") from exc


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return parse_config(raw)


def build_regularizer(spec: dict):
    kind = _require(spec, "kind", "regularizer")
    lam = float(_require(spec, "lam", "regularizer"))
    try:
        if kind == "l1":
            return proximal.L1(lam)
        if kind == "group_lasso":
            return proximal.GroupLasso(lam, tuple(_require(spec, "boundaries", "regularizer")))
        if kind == "fused_lasso":
            return proximal.FusedLasso(lam)
        if kind == "nuclear_norm":
            return proximal.NuclearNorm(
                lam,
                int(_require(spec, "rows", "regularizer")),
                int(_require(spec, "cols", "regularizer")),
            )
    except ValueError as exc:
        raise ConfigError(f"regularizer: {exc}") from exc
    raise ConfigError(
        f"regularizer field 'kind': unknown kind {kind!r} "
        f"(expected one of {sorted(proximal.REGULARIZER_KINDS)})"
    )


def build_dataset(spec: dict) -> objective.Dataset:
    if "dataset_csv" in spec:
        return objective.load_dataset_csv(
            spec["dataset_csv"], ridge_lambda=float(spec.get("ridge_lambda", 0.0))
        )
    try:
        cfg = objective.SyntheticConfig(
            n=int(_require(spec, "n", "problem")),
            m=int(_require(spec, "m", "problem")),
            targets=int(spec.get("targets", 1)),
            ridge_lambda=float(spec.get("ridge_lambda", 0.0)),
            noise_std=float(spec.get("noise_std", 0.0)),
            ground_truth_sparsity=float(spec.get("ground_truth_sparsity", 0.0)),
            seed=int(spec.get("seed", 0)),
        )
    except ValueError as exc:
        raise ConfigError(f"problem: {exc}") from exc
    return objective.generate_synthetic(cfg)


def build_schedule(spec: dict, ds: objective.Dataset, tau: int):
    kind = _require(spec, "kind", "schedule")
    if kind == "diminishing":
        return solvers.DiminishingTheorem1(
            mu=float(_require(spec, "mu", "schedule")), u=float(_require(spec, "u", "schedule"))
        )
    if kind == "diminishing_auto":
        bounds = spectral_bounds(ds)
        if bounds.strong_convexity <= 0:
            raise ConfigError("schedule 'diminishing_auto' needs a strongly convex problem")
        return solvers.default_diminishing(bounds.strong_convexity, bounds.lipschitz, tau)
    if kind == "constant":
        return solvers.ConstantTheorem2(
            v=float(_require(spec, "v", "schedule")),
            total_iterations=int(_require(spec, "total_iterations", "schedule")),
        )
    if kind == "constant_auto":
        bounds = spectral_bounds(ds)
        return solvers.default_constant(
            bounds.lipschitz, int(_require(spec, "total_iterations", "schedule"))
        )
    if kind == "reciprocal":
        return solvers.Reciprocal(
            a=float(_require(spec, "a", "schedule")), b=float(spec.get("b", 0.0))
        )
    raise ConfigError(f"schedule field 'kind': unknown kind {kind!r}")


def build_delay(spec: dict, seed: int):
    kind = _require(spec, "kind", "delay")
    if kind == "uniform":
        return runtime.UniformBounded(tau=int(_require(spec, "tau", "delay")), seed=seed)
    if kind == "worker_queue":
        return runtime.WorkerQueue(workers=int(_require(spec, "workers", "delay")), seed=seed)
    raise ConfigError(f"delay field 'kind': unknown kind {kind!r}")


def build_prox_config(spec: dict) -> proximal.ProxSolveConfig:
    if not spec:
        return proximal.DEFAULT_PROX_CONFIG
    return proximal.ProxSolveConfig(
        dual_tolerance=float(spec.get("dual_tolerance", 1e-10)),
        dual_max_iterations=int(spec.get("dual_max_iterations", 100_000)),
    )


def _problem_digest(cfg: ExperimentConfig) -> str:
    problem = dict(cfg.problem)
    if "dataset_csv" in problem:
        with open(problem["dataset_csv"], "rb") as fh:
            problem["dataset_sha256"] = hashlib.sha256(fh.read()).hexdigest()
        problem["dataset_csv"] = os.path.basename(problem["dataset_csv"])
    payload = json.dumps(
        {
            "problem": problem,
            "regularizer": cfg.regularizer,
            "reference_tolerance": cfg.reference_tolerance,
        },
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def config_digest(cfg: ExperimentConfig) -> str:
    payload = json.dumps(
        {
            "problem": cfg.problem,
            "regularizer": cfg.regularizer,
            "algorithms": list(cfg.algorithms),
            "schedule": cfg.schedule,
            "delay": cfg.delay,
            "total_iterations": cfg.total_iterations,
            "seeds": list(cfg.seeds),
            "log_every": cfg.log_every,
            "prox": cfg.prox,
            "reference_tolerance": cfg.reference_tolerance,
        },
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def reference_for(cfg: ExperimentConfig, ds, reg, cache_dir, prox_cfg=None) -> np.ndarray:
    """The reference optimum for a config's problem, disk-cached by problem
    digest and revalidated against the gradient-mapping tolerance on reuse."""
    os.makedirs(cache_dir, exist_ok=True)
    path = os.path.join(cache_dir, f"reference_{_problem_digest(cfg)}.npz")
    tol = cfg.reference_tolerance
    bounds = spectral_bounds(ds)
    if bounds.strong_convexity <= 0:
        raise ConfigError(
            "problem is not strongly convex (mu = 0); the reference solve would not "
            "converge. Set ridge_lambda > 0 or provide full-rank data."
        )
    if os.path.exists(path):
        cached = np.load(path)
        x = cached["x"]
        eta = 1.0 / bounds.lipschitz
        if x.shape == (ds.parameter_length,) and solvers.gradient_mapping_norm(
            ds, reg, x, eta, prox_cfg
        ) <= tol * (1 + 1e-9):
            return x
    x = solvers.solve_reference(ds, reg, tol=tol, cfg=prox_cfg)
    np.savez(path, x=x, tolerance=tol)
    return x


def _format_row(algorithm, seed, rec: runtime.TraceRecord) -> str:
    log_d = math.log(rec.distance_sq) if rec.distance_sq > 0 else -math.inf
    return (
        f"{algorithm},{seed},{rec.t},{rec.wall_nanos},{rec.distance_sq!r},{log_d!r}"
    )


def run_convergence_experiment(cfg: ExperimentConfig, out_prefix: str) -> RunRecord:
    """Simulate every (algorithm, seed) pair and write
    ``<out_prefix>_trace.csv`` and ``<out_prefix>_summary.json``."""
    ds = build_dataset(cfg.problem)
    reg = build_regularizer(cfg.regularizer)
    prox_cfg = build_prox_config(cfg.prox)
    cache_dir = os.path.join(os.path.dirname(os.path.abspath(out_prefix)) or ".", "refcache")
    reference = reference_for(cfg, ds, reg, cache_dir, prox_cfg)
    tau = build_delay(cfg.delay, seed=0).tau
    schedule = build_schedule(cfg.schedule, ds, tau)

    record = RunRecord(config_digest=config_digest(cfg))
    lines = [TRACE_HEADER]
    for algorithm in cfg.algorithms:
        for seed in cfg.seeds:
            delay = build_delay(cfg.delay, seed=seed)
            trace, log = runtime.simulate(
                algorithm,
                ds,
                reg,
                schedule,
                delay,
                cfg.total_iterations,
                prox_cfg=prox_cfg,
                reference=reference,
                log_every=cfg.log_every,
            )
            lines.extend(_format_row(algorithm, seed, rec) for rec in trace.records)
            final = trace.records[-1]
            ref_avg = trace.running_average - reference
            record.runs.append(
                {
                    "algorithm": algorithm,
                    "seed": seed,
                    "iterations": cfg.total_iterations,
                    "final_t": final.t,
                    "final_distance_sq": final.distance_sq,
                    "final_log_distance_sq": math.log(final.distance_sq)
                    if final.distance_sq > 0
                    else -math.inf,
                    "initial_distance_sq": trace.initial_distance_sq,
                    "running_average_distance_sq": float(ref_avg @ ref_avg),
                    "observed_max_delay": runtime.measured_max_delay(log),
                }
            )
    with open(f"{out_prefix}_trace.csv", "w") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(f"{out_prefix}_summary.json", "w") as fh:
        json.dump(
            {"config_digest": record.config_digest, "runs": record.runs},
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")
    return record


def run_speedup_experiment(
    cfg: ExperimentConfig, worker_counts, out_prefix: str, seed: int = 0
):
    """Run the threaded runtime per (algorithm, worker count) and write
    ``<out_prefix>_speedup.csv`` with wall time, speedup vs one worker and
    the master critical-section share."""
    worker_counts = sorted(set(int(s) for s in worker_counts))
    if not worker_counts:
        raise ConfigError("speedup experiment needs a nonempty worker_counts list")
    if worker_counts[0] != 1:
        worker_counts.insert(0, 1)  # speedup is defined against the 1-worker wall time
    ds = build_dataset(cfg.problem)
    reg = build_regularizer(cfg.regularizer)
    prox_cfg = build_prox_config(cfg.prox)
    cache_dir = os.path.join(os.path.dirname(os.path.abspath(out_prefix)) or ".", "refcache")
    reference = reference_for(cfg, ds, reg, cache_dir, prox_cfg)
    schedule = build_schedule(cfg.schedule, ds, max(worker_counts))
    reg_kind = cfg.regularizer.get("kind", type(reg).__name__)

    rows = []
    results = []
    for algorithm in cfg.algorithms:
        if algorithm == runtime.PSGD:
            continue
        base_wall = None
        for s_count in worker_counts:
            trace, log, timing = runtime.run_threads(
                algorithm,
                ds,
                reg,
                schedule,
                workers=s_count,
                total_iterations=cfg.total_iterations,
                prox_cfg=prox_cfg,
                reference=reference,
                log_every=cfg.log_every,
                seed=seed,
            )
            wall_s = timing.total_nanos / 1e9
            if base_wall is None:
                base_wall = wall_s
            speedup = base_wall / wall_s
            rows.append(
                f"{algorithm},{reg_kind},{s_count},{wall_s!r},{speedup!r},"
                f"{timing.master_critical_share!r}"
            )
            results.append(
                {
                    "algorithm": algorithm,
                    "workers": s_count,
                    "wall_seconds": wall_s,
                    "speedup": speedup,
                    "timing": timing,
                    "observed_max_delay": runtime.measured_max_delay(log),
                    "final_distance_sq": trace.final_distance_sq,
                }
            )
    with open(f"{out_prefix}_speedup.csv", "w") as fh:
        fh.write("\n".join([SPEEDUP_HEADER] + rows) + "\n")
    return results
