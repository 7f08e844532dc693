import csv
import os

import numpy as np
import pytest

from subris.cli import main as cli_main
from subris.harness import (AGGREGATE_COLUMNS, RESULT_COLUMNS, ConfigError,
                            ExperimentConfig, default_config, load_config,
                            parse_quantity, run_experiment)


def test_parse_quantity_units():
    assert parse_quantity("40 dBm") == pytest.approx(10.0)
    assert parse_quantity("4.15 dBW") == pytest.approx(10 ** 0.415)
    assert parse_quantity("4 dB") == pytest.approx(10 ** 0.4)
    assert parse_quantity("7 dBm") == pytest.approx(5.011872336e-3, rel=1e-9)
    assert parse_quantity("2.5") == 2.5
    assert parse_quantity("3 mW") == pytest.approx(3e-3)
    assert parse_quantity("200 m") == 200.0
    with pytest.raises(ConfigError):
        parse_quantity("3 furlongs")


def test_paper_scale_defaults_match_reference_values():
    cfg = default_config("sumrate_vs_pbs", scale="paper")
    assert (cfg.N, cfg.K, cfg.M) == (16, 4, 256)
    assert cfg.sigma_sq == pytest.approx(1e-11)
    assert cfg.sigma_z_sq == pytest.approx(1e-11)
    assert cfg.W_PS == pytest.approx(10 ** 0.7 * 1e-3)
    assert cfg.W_PA == pytest.approx(10 ** 0.7 * 1e-3)
    assert cfg.W_BS == pytest.approx(10 ** 0.6)
    assert cfg.P_RIS_tot == pytest.approx(10 ** 0.415)
    assert cfg.nu1 == pytest.approx(1 / 1.1)
    assert cfg.nu2 == pytest.approx(1 / 1.1)
    assert cfg.rho == 1.0


def test_load_config_round_trip(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text(
        "# comment line\n"
        "preset = sumrate_vs_pbs\n"
        "M = 8\nN = 2\nK = 1\n"
        "P_BS = 40 dBm   # watts after parsing\n"
        "sweep = 20 dBm, 30 dBm\n"
        "architectures = sub:2, fully\n"
        "trials = 2\nseed = 7\n")
    cfg = load_config(str(path))
    assert cfg.P_BS == pytest.approx(10.0)
    assert cfg.sweep == pytest.approx([0.1, 1.0])
    assert cfg.architectures == ["sub:2", "fully"]
    assert cfg.trials == 2 and cfg.seed == 7


def test_load_config_rejects_unknown_key(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("preset = sumrate_vs_pbs\nbogus = 3\n")
    with pytest.raises(ConfigError, match="bogus"):
        load_config(str(path))


def test_load_config_rejects_bad_divisor(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("preset = sumrate_vs_L\nM = 256\nsweep = 48\n")
    with pytest.raises(ConfigError, match="divide"):
        load_config(str(path))


def _tiny_cfg(**kw):
    cfg = default_config("sumrate_vs_pbs")
    base = dict(M=8, N=2, K=1, trials=2, seed=5, sweep=[0.1],
                architectures=["sub:2"], admm_max_iter=6, outer_max_iter=4,
                theta_step_tol=1e-3)
    base.update(kw)
    from dataclasses import replace
    return replace(cfg, **base).validate()


def test_run_experiment_deterministic(tmp_path):
    cfg = _tiny_cfg()
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert run_experiment(cfg, str(out1)) == 0
    assert run_experiment(cfg, str(out2)) == 0
    for name in ("results.csv", "aggregate.csv"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_run_experiment_parallel_matches_serial(tmp_path):
    cfg = _tiny_cfg()
    from dataclasses import replace
    out1, out2 = tmp_path / "serial", tmp_path / "par"
    run_experiment(cfg, str(out1))
    run_experiment(replace(cfg, workers=2), str(out2))
    assert (out1 / "results.csv").read_bytes() == (out2 / "results.csv").read_bytes()


def test_results_schema(tmp_path):
    cfg = _tiny_cfg(trials=1)
    out = tmp_path / "o"
    run_experiment(cfg, str(out))
    with open(out / "results.csv") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == RESULT_COLUMNS
    assert all(len(r) == len(RESULT_COLUMNS) for r in rows[1:])
    metrics = {r[5] for r in rows[1:]}
    assert "sum_rate" in metrics
    with open(out / "aggregate.csv") as fh:
        arows = list(csv.reader(fh))
    assert tuple(arows[0]) == AGGREGATE_COLUMNS
    agg = {r[3]: r for r in arows[1:]}
    assert "infeasible_rate" in agg
    assert float(agg["infeasible_rate"][4]) == 0.0


def test_infeasible_budget_rows_match_no_ris_baseline(tmp_path):
    # fully connected with a budget below the static draw: every trial reports
    # the infeasible status and the rate equals the no-RIS pipeline output
    low = _tiny_cfg(M=8, architectures=["fully"], trials=2)
    from dataclasses import replace
    static = 8 * low.W_PS + 8 * low.W_PA
    cfg1 = replace(low, preset="sumrate_vs_pris", sweep=[static * 0.9]).validate()
    cfg2 = replace(low, preset="sumrate_vs_pris", sweep=[static * 0.5]).validate()
    out1, out2 = tmp_path / "x", tmp_path / "y"
    run_experiment(cfg1, str(out1))
    run_experiment(cfg2, str(out2))

    def rates(out):
        with open(out / "results.csv") as fh:
            rows = [r for r in csv.reader(fh)][1:]
        assert all(r[7] == "infeasible_budget" for r in rows)
        return sorted(float(r[6]) for r in rows if r[5] == "sum_rate")

    # the budget level is irrelevant once infeasible: pure no-RIS rates
    assert rates(out1) == pytest.approx(rates(out2), rel=1e-12)


def test_convergence_trace_files(tmp_path):
    cfg = _tiny_cfg(trials=2)
    from dataclasses import replace
    cfg = replace(cfg, preset="convergence_trace", sweep=[0.0]).validate()
    out = tmp_path / "t"
    run_experiment(cfg, str(out))
    for t in range(2):
        path = out / f"trace_{t}.csv"
        assert path.exists()
        with open(path) as fh:
            rows = list(csv.reader(fh))
        assert rows[0][0] == "outer_iter"
        assert len(rows) >= 2


def test_cli_validate_and_run(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("preset = sumrate_vs_pbs\nM = 8\nN = 2\nK = 1\n"
                    "sweep = 20 dBm\narchitectures = sub:2\ntrials = 1\n"
                    "admm_max_iter = 5\nouter_max_iter = 3\n")
    assert cli_main(["validate", "--config", str(path)]) == 0
    out = tmp_path / "out"
    assert cli_main(["run", "--config", str(path), "--out", str(out)]) == 0
    assert (out / "results.csv").exists()
    assert cli_main(["validate", "--config", str(tmp_path / "missing.cfg")]) == 2
