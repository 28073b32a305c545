"""Command line entry point.

Subcommands:

* ``converge --config cfg.json --out prefix`` -- simulated convergence runs,
  writes ``prefix_trace.csv`` and ``prefix_summary.json``
* ``speedup --config cfg.json --out prefix [--workers 1,2,4]`` -- threaded
  speedup runs, writes ``prefix_speedup.csv``
* ``reference --config cfg.json --out prefix`` -- compute/cache the reference
  optimum for the config's problem
* ``prox-check [--trials N] [--seed S]`` -- prox vs independent-oracle
  agreement; prints the per-variant max deviation, exit 0 iff all <= 1e-5

Exit status: 0 on success, 2 on usage/config errors (with the offending path
in the message), 1 on runtime failures. Errors print a single
machine-parsable ``error: ...`` line on stderr.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import harness, proximal

PROX_CHECK_TOLERANCE = 1e-5


def _random_instance(kind: str, rng: np.random.Generator):
    if kind == "l1":
        m = int(rng.integers(2, 11))
        return proximal.L1(float(rng.uniform(0.05, 1.0))), rng.standard_normal(m)
    if kind == "group_lasso":
        n_groups = int(rng.integers(1, 4))
        sizes = rng.integers(1, 4, size=n_groups)
        bounds = tuple(np.concatenate([[0], np.cumsum(sizes)]).tolist())
        reg = proximal.GroupLasso(float(rng.uniform(0.05, 1.0)), bounds)
        return reg, rng.standard_normal(bounds[-1])
    if kind == "fused_lasso":
        m = int(rng.integers(2, 11))
        return proximal.FusedLasso(float(rng.uniform(0.05, 1.0))), rng.standard_normal(m)
    if kind == "nuclear_norm":
        rows = int(rng.integers(2, 5))
        cols = int(rng.integers(2, 5))
        reg = proximal.NuclearNorm(float(rng.uniform(0.05, 0.8)), rows, cols)
        return reg, rng.standard_normal(rows * cols)
    raise ValueError(kind)


def prox_check(trials: int, seed: int, out=None) -> float:
    """Max L2 deviation between prox and prox_oracle over random instances of
    every variant; prints one line per variant."""
    out = out if out is not None else sys.stdout
    worst_overall = 0.0
    for kind in sorted(proximal.REGULARIZER_KINDS):
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(trials):
            reg, x = _random_instance(kind, rng)
            eta = float(rng.uniform(0.2, 1.5))
            gap = float(
                np.linalg.norm(reg.prox(x, eta) - proximal.prox_oracle(reg, x, eta))
            )
            worst = max(worst, gap)
        print(f"prox-check {kind}: max |prox - oracle| = {worst:.3e} over {trials} trials", file=out)
        worst_overall = max(worst_overall, worst)
    return worst_overall


def _add_config_out(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="path to a JSON experiment config")
    parser.add_argument("--out", required=True, help="output path prefix")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dapsgd",
        description="Asynchronous proximal SGD experiments (simulated and threaded)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    _add_config_out(sub.add_parser("converge", help="simulated convergence experiment"))

    speedup = sub.add_parser("speedup", help="threaded speedup experiment")
    _add_config_out(speedup)
    speedup.add_argument(
        "--workers",
        default="1,2,4",
        help="comma-separated worker counts (default 1,2,4)",
    )

    _add_config_out(sub.add_parser("reference", help="compute and cache the reference optimum"))

    check = sub.add_parser("prox-check", help="prox vs oracle agreement suite")
    check.add_argument("--trials", type=int, default=200)
    check.add_argument("--seed", type=int, default=7)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "prox-check":
            worst = prox_check(args.trials, args.seed)
            if worst > PROX_CHECK_TOLERANCE:
                print(
                    f"error: prox-check deviation {worst:.3e} exceeds {PROX_CHECK_TOLERANCE:g}",
                    file=sys.stderr,
                )
                return 1
            return 0

        cfg = harness.load_config(args.config)
        if args.command == "converge":
            record = harness.run_convergence_experiment(cfg, args.out)
            print(f"wrote {args.out}_trace.csv and {args.out}_summary.json ({len(record.runs)} runs)")
            return 0
        if args.command == "speedup":
            counts = [int(v) for v in str(args.workers).split(",") if v]
            harness.run_speedup_experiment(cfg, counts, args.out)
            print(f"wrote {args.out}_speedup.csv")
            return 0
        if args.command == "reference":
            ds = harness.build_dataset(cfg.problem)
            reg = harness.build_regularizer(cfg.regularizer)
            x = harness.reference_for(
                cfg, ds, reg, f"{args.out}_refcache", harness.build_prox_config(cfg.prox)
            )
            out_path = f"{args.out}_reference.npz"
            np.savez(out_path, x=x, tolerance=cfg.reference_tolerance)
            print(f"wrote {out_path} (norm {float(np.linalg.norm(x)):.6g})")
            return 0
        raise AssertionError(f"unhandled command {args.command}")
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return 2
    except harness.ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
