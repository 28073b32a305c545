import json
import math

import numpy as np
import pytest

from dapsgd import cli, harness
from dapsgd.harness import ConfigError


def desk_config(**overrides):
    raw = {
        "problem": {
            "n": 60,
            "m": 20,
            "ridge_lambda": 0.5,
            "noise_std": 0.1,
            "ground_truth_sparsity": 0.5,
            "seed": 1234,
        },
        "regularizer": {"kind": "l1", "lam": 0.1},
        "algorithms": ["TAP", "DAP"],
        "schedule": {"kind": "diminishing_auto"},
        "delay": {"kind": "uniform", "tau": 0},
        "total_iterations": 400,
        "seeds": [0, 1],
        "log_every": 50,
    }
    raw.update(overrides)
    return raw


def write_config(tmp_path, raw, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(raw))
    return str(path)


class TestConfigParsing:
    def test_roundtrip(self, tmp_path):
        cfg = harness.load_config(write_config(tmp_path, desk_config()))
        assert cfg.algorithms == ("TAP", "DAP")
        assert cfg.total_iterations == 400

    def test_missing_field_named(self, tmp_path):
        raw = desk_config()
        del raw["schedule"]
        with pytest.raises(ConfigError, match="schedule"):
            harness.load_config(write_config(tmp_path, raw))

    def test_bad_json_reports_line(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{\n  "problem": }')
        with pytest.raises(ConfigError, match="line 2"):
            harness.load_config(str(path))

    def test_missing_file_raises_filenotfound(self):
        with pytest.raises(FileNotFoundError):
            harness.load_config("/nonexistent/cfg.json")

    def test_unknown_algorithm(self, tmp_path):
        with pytest.raises(ConfigError, match="algorithm"):
            harness.load_config(write_config(tmp_path, desk_config(algorithms=["SGD"])))

    def test_unknown_regularizer_kind(self, tmp_path):
        raw = desk_config(regularizer={"kind": "elastic", "lam": 1.0})
        with pytest.raises(ConfigError, match="elastic"):
            cfg = harness.load_config(write_config(tmp_path, raw))
            harness.build_regularizer(cfg.regularizer)

    def test_empty_seeds(self, tmp_path):
        with pytest.raises(ConfigError, match="seed"):
            harness.load_config(write_config(tmp_path, desk_config(seeds=[])))


class TestConvergenceExperiment:
    def test_outputs_and_reproducibility(self, tmp_path):
        cfg = harness.load_config(write_config(tmp_path, desk_config()))
        out1 = str(tmp_path / "runA")
        out2 = str(tmp_path / "runB")
        harness.run_convergence_experiment(cfg, out1)
        harness.run_convergence_experiment(cfg, out2)
        csv1 = (tmp_path / "runA_trace.csv").read_bytes()
        csv2 = (tmp_path / "runB_trace.csv").read_bytes()
        assert csv1 == csv2
        summary = json.loads((tmp_path / "runA_summary.json").read_text())
        assert len(summary["runs"]) == 4  # 2 algorithms x 2 seeds

    def test_tau_zero_tap_dap_rows_identical(self, tmp_path):
        cfg = harness.load_config(write_config(tmp_path, desk_config()))
        out = str(tmp_path / "collapse")
        harness.run_convergence_experiment(cfg, out)
        lines = (tmp_path / "collapse_trace.csv").read_text().strip().splitlines()
        body = [ln.split(",", 1)[1] for ln in lines[1:]]  # drop algorithm column
        tap_rows = body[: len(body) // 2]
        dap_rows = body[len(body) // 2 :]
        assert tap_rows == dap_rows

    def test_summary_matches_last_csv_row(self, tmp_path):
        cfg = harness.load_config(write_config(tmp_path, desk_config(seeds=[3])))
        out = str(tmp_path / "summ")
        record = harness.run_convergence_experiment(cfg, out)
        lines = (tmp_path / "summ_trace.csv").read_text().strip().splitlines()
        assert lines[0] == harness.TRACE_HEADER
        by_key = {}
        for ln in lines[1:]:
            alg, seed, t, wall, dist, logd = ln.split(",")
            by_key[(alg, int(seed))] = float(dist)
        for run in record.runs:
            assert math.isclose(
                run["final_distance_sq"],
                by_key[(run["algorithm"], run["seed"])],
                rel_tol=1e-15,
                abs_tol=0.0,
            )

    def test_reference_cache_reused_and_revalidated(self, tmp_path):
        raw = desk_config()
        cfg = harness.load_config(write_config(tmp_path, raw))
        ds = harness.build_dataset(cfg.problem)
        reg = harness.build_regularizer(cfg.regularizer)
        cache = str(tmp_path / "refcache")
        x1 = harness.reference_for(cfg, ds, reg, cache)
        x2 = harness.reference_for(cfg, ds, reg, cache)
        assert np.array_equal(x1, x2)
        # corrupt the cache: must be detected and recomputed
        import glob, os

        path = glob.glob(os.path.join(cache, "reference_*.npz"))[0]
        np.savez(path, x=np.zeros_like(x1) + 99.0, tolerance=cfg.reference_tolerance)
        x3 = harness.reference_for(cfg, ds, reg, cache)
        assert np.allclose(x3, x1, atol=1e-9)

    def test_mu_zero_problem_refused(self, tmp_path):
        raw = desk_config()
        raw["problem"]["ridge_lambda"] = 0.0
        raw["problem"]["n"] = 5  # rank deficient: n < m
        cfg = harness.load_config(write_config(tmp_path, raw))
        ds = harness.build_dataset(cfg.problem)
        reg = harness.build_regularizer(cfg.regularizer)
        with pytest.warns(UserWarning):
            with pytest.raises(ConfigError, match="strongly convex"):
                harness.reference_for(cfg, ds, reg, str(tmp_path / "rc"))

    def test_paper_scale_l1_config_accepted(self, tmp_path):
        # the first-experiment shape: n=1e3, m=5e3, T=2e5, eta_t=1/(2e5+200t),
        # lam=200. Accepted and runnable in simulation mode (validated here
        # with a short horizon; the full horizon is exercised in demos).
        raw = {
            "problem": {"n": 1000, "m": 5000, "ridge_lambda": 0.5, "noise_std": 0.1,
                        "ground_truth_sparsity": 0.5, "seed": 0},
            "regularizer": {"kind": "l1", "lam": 200.0},
            "algorithms": ["TAP", "DAP"],
            "schedule": {"kind": "reciprocal", "a": 2e5, "b": 200.0},
            "delay": {"kind": "uniform", "tau": 8},
            "total_iterations": 200_000,
            "seeds": [0],
        }
        cfg = harness.load_config(write_config(tmp_path, raw))
        assert cfg.total_iterations == 200_000
        ds = harness.build_dataset(cfg.problem)
        assert ds.samples.shape == (1000, 5000)
        sched = harness.build_schedule(cfg.schedule, ds, tau=8)
        assert sched.eta(0) == pytest.approx(5e-6)


class TestSpeedupExperiment:
    def test_single_worker_speedup_is_one(self, tmp_path):
        raw = desk_config(
            algorithms=["DAP"],
            total_iterations=150,
            schedule={"kind": "diminishing_auto"},
        )
        cfg = harness.load_config(write_config(tmp_path, raw))
        results = harness.run_speedup_experiment(cfg, [1], str(tmp_path / "sp"))
        assert results[0]["workers"] == 1
        assert results[0]["speedup"] == 1.0
        lines = (tmp_path / "sp_speedup.csv").read_text().strip().splitlines()
        assert lines[0] == harness.SPEEDUP_HEADER
        assert len(lines) == 2


class TestCli:
    def test_converge_subcommand(self, tmp_path, capsys):
        cfg_path = write_config(tmp_path, desk_config(seeds=[0]))
        out = str(tmp_path / "cli_run")
        assert cli.main(["converge", "--config", cfg_path, "--out", out]) == 0
        assert (tmp_path / "cli_run_trace.csv").exists()
        assert (tmp_path / "cli_run_summary.json").exists()

    def test_reference_subcommand(self, tmp_path):
        cfg_path = write_config(tmp_path, desk_config())
        out = str(tmp_path / "cli_ref")
        assert cli.main(["reference", "--config", cfg_path, "--out", out]) == 0
        data = np.load(f"{out}_reference.npz")
        assert data["x"].shape == (20,)

    def test_missing_config_exits_2_with_path(self, tmp_path, capsys):
        missing = str(tmp_path / "nope.json")
        assert cli.main(["converge", "--config", missing, "--out", "x"]) == 2
        assert missing in capsys.readouterr().err

    def test_config_error_exits_2(self, tmp_path, capsys):
        raw = desk_config()
        del raw["delay"]
        cfg_path = write_config(tmp_path, raw)
        assert cli.main(["converge", "--config", cfg_path, "--out", str(tmp_path / "o")]) == 2
        assert "delay" in capsys.readouterr().err

    def test_unknown_subcommand_exits_2(self):
        with pytest.raises(SystemExit) as exc_info:
            cli.main(["frobnicate"])
        assert exc_info.value.code == 2

    def test_unknown_flag_exits_2(self, tmp_path):
        with pytest.raises(SystemExit) as exc_info:
            cli.main(["converge", "--nonsense"])
        assert exc_info.value.code == 2

    def test_prox_check_small(self, capsys):
        assert cli.main(["prox-check", "--trials", "3", "--seed", "7"]) == 0
        out = capsys.readouterr().out
        for kind in ("l1", "group_lasso", "fused_lasso", "nuclear_norm"):
            assert kind in out

    def test_speedup_subcommand(self, tmp_path):
        raw = desk_config(algorithms=["DAP"], total_iterations=120)
        cfg_path = write_config(tmp_path, raw)
        out = str(tmp_path / "cli_sp")
        assert cli.main(["speedup", "--config", cfg_path, "--out", out, "--workers", "1,2"]) == 0
        assert (tmp_path / "cli_sp_speedup.csv").exists()
