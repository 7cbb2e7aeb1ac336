import csv
import hashlib
import json
import os

import pytest

from factorport.cli import main


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def sha256(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


@pytest.fixture(scope="module")
def panel_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "panel.csv"
    code = main(
        ["synth", "--assets", "8", "--dates", "40", "--k", "2", "--seed", "11", "--out", str(path)]
    )
    assert code == 0
    return path


def write_config(tmp_path, panel_csv, extra="", strategies="ew, sample, pca:static"):
    cfg = tmp_path / "run.cfg"
    out_dir = tmp_path / "results"
    cfg.write_text(
        f"panel = {panel_csv}\n"
        f"out_dir = {out_dir}\n"
        "seed = 5\n"
        "window_length = 30\n"
        "window_step = 2\n"
        "min_price = 0.0\n"
        "top_n_by_cap = 8\n"
        f"strategies = {strategies}\n"
        "k_grid = 1,2\n"
        "bootstrap_resamples = 50\n"
        + extra
    )
    return cfg, out_dir


class TestSynth:
    def test_deterministic_bytes(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        args = ["synth", "--assets", "5", "--dates", "12", "--k", "1", "--seed", "3"]
        assert main(args + ["--out", str(a)]) == 0
        assert main(args + ["--out", str(b)]) == 0
        assert sha256(a) == sha256(b)

    def test_missing_out_is_usage_error(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["synth", "--assets", "5", "--dates", "12", "--k", "1", "--seed", "3"])
        assert exc.value.code == 2

    def test_prints_hash(self, tmp_path, capsys):
        path = tmp_path / "p.csv"
        main(["synth", "--assets", "4", "--dates", "10", "--k", "1", "--seed", "1", "--out", str(path)])
        out = capsys.readouterr().out
        assert sha256(path) in out


class TestBacktestCommand:
    def test_minimal_run_produces_outputs(self, tmp_path, panel_csv):
        cfg, out_dir = write_config(tmp_path, panel_csv, strategies="ew, sample")
        assert main(["backtest", "--config", str(cfg)]) == 0
        rows = read_rows(out_dir / "summary.csv")
        assert {r["strategy"] for r in rows} == {"ew", "sample"}
        for name in ("weights.csv", "returns.csv", "turnover.csv", "manifest.json"):
            assert (out_dir / name).exists()
        manifest = json.loads((out_dir / "manifest.json").read_text())
        assert manifest["seed"] == 5
        assert "config_sha256" in manifest

    def test_missing_factor_file_is_config_error(self, tmp_path, panel_csv):
        cfg, _ = write_config(
            tmp_path, panel_csv, extra="factors = does_not_exist.csv\n", strategies="ff3:static"
        )
        assert main(["backtest", "--config", str(cfg)]) == 2

    def test_ff3_without_factors_is_config_error(self, tmp_path, panel_csv):
        cfg, _ = write_config(tmp_path, panel_csv, strategies="ff3:static")
        assert main(["backtest", "--config", str(cfg)]) == 2

    def test_config_error_lists_all_violations(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("panel = missing.csv\nstrategies = nope\nvar_level = 7\nseed = 1\n")
        assert main(["backtest", "--config", str(cfg)]) == 2
        err = capsys.readouterr().err
        assert "missing.csv" in err and "nope" in err and "var_level" in err

    def test_rerun_is_byte_identical(self, tmp_path, panel_csv):
        cfg, out_dir = write_config(tmp_path, panel_csv)
        assert main(["backtest", "--config", str(cfg)]) == 0
        first = {f: sha256(out_dir / f) for f in os.listdir(out_dir)}
        assert main(["backtest", "--config", str(cfg)]) == 0
        second = {f: sha256(out_dir / f) for f in os.listdir(out_dir)}
        assert first == second

    def test_jobs_matches_serial(self, tmp_path, panel_csv):
        cfg, out_dir = write_config(tmp_path, panel_csv)
        assert main(["backtest", "--config", str(cfg)]) == 0
        serial = sha256(out_dir / "summary.csv")
        assert main(["backtest", "--config", str(cfg), "--jobs", "2"]) == 0
        assert sha256(out_dir / "summary.csv") == serial


@pytest.fixture(scope="module")
def completed_run(tmp_path_factory, panel_csv):
    tmp_path = tmp_path_factory.mktemp("run")
    cfg, out_dir = write_config(tmp_path, panel_csv)
    assert main(["backtest", "--config", str(cfg)]) == 0
    return out_dir


class TestReportCommand:

    def test_performance_table_has_all_columns(self, completed_run):
        assert main(["report", "--results", str(completed_run)]) == 0
        rows = read_rows(completed_run / "performance.csv")
        assert set(rows[0]) == {"strategy", "mean", "sd", "sr", "mad", "var95", "cvar95", "to"}
        assert (completed_run / "breakeven.csv").exists()
        assert (completed_run / "structure_summary.csv").exists()
        assert (completed_run / "plotdata_cum_returns.csv").exists()

    def test_subperiods_without_market_factor_is_usage_error(self, completed_run):
        assert main(["report", "--results", str(completed_run), "--subperiods", "volatility"]) == 2

    def test_median_subperiods_with_factor_series(self, completed_run, tmp_path):
        rows = read_rows(completed_run / "returns.csv")
        dates = sorted({r["date"] for r in rows})
        factor = tmp_path / "mkt.csv"
        factor.write_text(
            "date,mkt\n" + "\n".join(f"{d},{0.01 * ((i % 5) - 2)}" for i, d in enumerate(dates))
        )
        code = main(
            [
                "report",
                "--results",
                str(completed_run),
                "--subperiods",
                "median",
                "--market-factor",
                str(factor),
            ]
        )
        assert code == 0
        sub = read_rows(completed_run / "subperiod_median.csv")
        assert {r["regime"] for r in sub} == {"high", "low"}

    def test_cost_tables(self, completed_run):
        assert main(["report", "--results", str(completed_run), "--costs", "5,20"]) == 0
        assert (completed_run / "net_performance_5bps.csv").exists()
        assert (completed_run / "net_performance_20bps.csv").exists()

    def test_missing_results_dir_fails(self, tmp_path):
        assert main(["report", "--results", str(tmp_path / "nowhere")]) == 1
