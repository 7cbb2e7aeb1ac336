"""Command-line entry point: synth, backtest and report subcommands.

Exit codes are a stable contract: 0 success, 1 runtime failure, 2
configuration or usage error. All output files are written atomically
(write to a temp name, then rename) and are pure functions of the inputs,
configuration and seed.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from .attribution import markov_switching_fit, median_split
from .backtest import (
    BacktestResult,
    apply_transaction_costs,
    run_backtests,
    weight_stats,
)
from .config import RunConfig, load_config
from .cov import bootstrap_structure_pvalue
from .errors import ConfigError, FactorportError, ParameterError, UndefinedError
from .metrics import bootstrap_diff_test, breakeven_cost, cer, perf_summary, var_cvar
from .panel import generate_synthetic, load_factor_series, load_panel


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        if not np.isfinite(value):
            return ""
        return format(value, ".10g")
    return str(value)


def _write_csv_atomic(path: str, header: list[str], rows: list[list]) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    os.replace(tmp, path)


def _write_json_atomic(path: str, payload) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def _sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def cmd_synth(args) -> int:
    panel = generate_synthetic(
        n_assets=args.assets,
        n_dates=args.dates,
        k_true=args.k,
        noise_scale=args.noise,
        seed=args.seed,
    )
    tmp = f"{args.out}.tmp"
    try:
        panel.to_csv(tmp)
        os.replace(tmp, args.out)
    except OSError as exc:
        print(f"error: cannot write {args.out}: {exc}", file=sys.stderr)
        return 1
    print(f"{_sha256_file(args.out)}  {args.out}")
    return 0


def _run_single(payload):
    panel, strategy, window, rules, factor_series, seed, rank_within = payload
    return run_backtests(panel, [strategy], window, rules, factor_series, seed, rank_within=rank_within)[
        strategy.name
    ]


def _summary_rows(
    results: dict[str, BacktestResult],
    cfg: RunConfig,
) -> tuple[list[str], list[list]]:
    """One summary row per strategy, percent units."""
    ew = results.get("ew")
    ew_perf = None
    ew_to = None
    if ew is not None and ew.returns.size >= 2:
        try:
            ew_perf = perf_summary(ew.returns)
        except UndefinedError:
            ew_perf = None
        ew_to = weight_stats(ew).avg_turnover * 100.0

    header = (
        ["strategy", "mean", "sd", "sr", "mad", "var95", "cvar95"]
        + [f"cer_g{g:g}" for g in cfg.gammas]
        + ["to", "max", "sd_w", "mad_ew", "c_ew_bps", "p_sd", "p_sr"]
    )
    rows = []
    for name, res in results.items():
        row: list = [name]
        stats = weight_stats(res)
        to_pct = stats.avg_turnover * 100.0
        try:
            perf = perf_summary(res.returns)
        except (UndefinedError, FactorportError):
            perf = None
        if perf is None:
            row += [None] * (6 + len(cfg.gammas))
        else:
            var95, cvar95 = var_cvar(perf.mean, perf.sd, cfg.var_level)
            row += [
                perf.mean * 100.0,
                perf.sd * 100.0,
                perf.sr,
                perf.mad * 100.0,
                var95 * 100.0,
                cvar95 * 100.0,
            ]
            row += [cer(res.returns, g) * 100.0 for g in cfg.gammas]
        row += [to_pct, stats.max_weight, stats.sd * 100.0, stats.mad_ew * 100.0]

        c_ew = None
        if perf is not None and ew_perf is not None and name != "ew":
            try:
                c_ew = breakeven_cost(perf.sr, ew_perf.sr, to_pct, ew_to)
            except UndefinedError:
                c_ew = None
        row.append(c_ew)

        p_sd = p_sr = None
        if ew is not None and name != "ew" and res.returns.size >= 4 * cfg.bootstrap_block:
            try:
                p_sd = bootstrap_diff_test(
                    res.returns,
                    ew.returns,
                    "sd",
                    cfg.bootstrap_block,
                    cfg.bootstrap_resamples,
                    cfg.seed,
                )
                p_sr = bootstrap_diff_test(
                    res.returns,
                    ew.returns,
                    "sr",
                    cfg.bootstrap_block,
                    cfg.bootstrap_resamples,
                    cfg.seed,
                )
            except (ParameterError, UndefinedError):
                p_sd = p_sr = None
        row += [p_sd, p_sr]
        rows.append(row)
    return header, rows


def cmd_backtest(args) -> int:
    cfg = load_config(args.config)
    if args.out_dir:
        cfg.out_dir = args.out_dir
    if args.seed is not None:
        cfg.seed = args.seed

    panel = load_panel(cfg.panel_path)
    factor_series = load_factor_series(cfg.factors_path) if cfg.factors_path else None

    if args.jobs > 1 and len(cfg.strategies) > 1:
        payloads = [
            (panel, s, cfg.window, cfg.rules, factor_series, cfg.seed, cfg.rank_within)
            for s in cfg.strategies
        ]
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            fetched = list(pool.map(_run_single, payloads))
        results = {r.strategy: r for r in fetched}
    else:
        results = run_backtests(
            panel, cfg.strategies, cfg.window, cfg.rules, factor_series, cfg.seed,
            rank_within=cfg.rank_within,
        )

    os.makedirs(cfg.out_dir, exist_ok=True)

    weight_rows = []
    return_rows = []
    turnover_rows = []
    structure_rows = []
    for name, res in results.items():
        for date, universe, w in zip(res.dates, res.universes, res.weights):
            for asset, wi in zip(universe, w):
                weight_rows.append([name, date, asset, float(wi)])
        for date, r in zip(res.dates, res.returns):
            return_rows.append([name, date, float(r)])
        for date, to in zip(res.dates[1:], res.turnover):
            turnover_rows.append([name, date, float(to)])
        if res.structure is not None:
            for date, (eig, mag, direction) in zip(res.dates, res.structure):
                structure_rows.append([name, date, eig, mag, direction])

    _write_csv_atomic(os.path.join(cfg.out_dir, "weights.csv"), ["strategy", "date", "asset", "weight"], weight_rows)
    _write_csv_atomic(os.path.join(cfg.out_dir, "returns.csv"), ["strategy", "date", "return"], return_rows)
    _write_csv_atomic(os.path.join(cfg.out_dir, "turnover.csv"), ["strategy", "date", "turnover"], turnover_rows)
    _write_csv_atomic(
        os.path.join(cfg.out_dir, "structure.csv"),
        ["strategy", "date", "eig", "mag", "dir"],
        structure_rows,
    )

    header, rows = _summary_rows(results, cfg)
    _write_csv_atomic(os.path.join(cfg.out_dir, "summary.csv"), header, rows)

    manifest = {
        "package_version": __version__,
        "seed": cfg.seed,
        "config_sha256": hashlib.sha256(cfg.raw_text.encode()).hexdigest(),
        "inputs": {
            "panel": _sha256_file(cfg.panel_path),
            "factors": _sha256_file(cfg.factors_path) if cfg.factors_path else None,
        },
        "window": {
            "length": cfg.window.length,
            "step": cfg.window.step,
            "validation_fraction": cfg.window.validation_fraction,
        },
        "rules": {
            "min_history_fraction": cfg.rules.min_history_fraction,
            "min_price": cfg.rules.min_price,
            "top_n_by_cap": cfg.rules.top_n_by_cap,
            "require_next_return": cfg.rules.require_next_return,
        },
        "strategies": [
            {
                "name": s.name,
                "method": s.method,
                "cov_spec": s.cov_spec,
                "optimizer": s.optimizer,
                "config_hash": results[s.name].config_hash,
            }
            for s in cfg.strategies
        ],
        "gaps": {name: res.gaps for name, res in results.items()},
        "metrics": {
            "gammas": list(cfg.gammas),
            "var_level": cfg.var_level,
            "bootstrap_block": cfg.bootstrap_block,
            "bootstrap_resamples": cfg.bootstrap_resamples,
        },
    }
    _write_json_atomic(os.path.join(cfg.out_dir, "manifest.json"), manifest)
    print(f"wrote {len(results)} strategies to {cfg.out_dir}")
    return 0


def _read_long_csv(path: str, value_cols: list[str]) -> dict[str, dict[str, list]]:
    """Read a long-form CSV into {strategy: {col: list}} keeping row order."""
    out: dict[str, dict[str, list]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            rec = out.setdefault(row["strategy"], {c: [] for c in ["date"] + value_cols})
            rec["date"].append(row["date"])
            for c in value_cols:
                rec[c].append(float(row[c]) if row[c] != "" else np.nan)
    return out


def cmd_report(args) -> int:
    results_dir = args.results
    returns_path = os.path.join(results_dir, "returns.csv")
    turnover_path = os.path.join(results_dir, "turnover.csv")
    manifest_path = os.path.join(results_dir, "manifest.json")
    for p in (returns_path, turnover_path, manifest_path):
        if not os.path.exists(p):
            print(f"error: missing input {p}", file=sys.stderr)
            return 1
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    out_dir = args.out_dir or results_dir
    os.makedirs(out_dir, exist_ok=True)

    returns = _read_long_csv(returns_path, ["return"])
    turnover = _read_long_csv(turnover_path, ["turnover"])
    by_strategy = {
        name: np.asarray(rec["return"], dtype=float) for name, rec in returns.items()
    }
    to_by_strategy = {
        name: np.asarray(rec["turnover"], dtype=float) for name, rec in turnover.items()
    }

    ew_returns = by_strategy.get("ew")
    ew_sr = None
    ew_to = None
    if ew_returns is not None and ew_returns.size >= 2:
        ew_sr = perf_summary(ew_returns).sr
        ew_to = float(np.mean(to_by_strategy.get("ew", np.zeros(1)))) * 100.0

    perf_rows = []
    breakeven_rows = []
    for name, series in by_strategy.items():
        perf = perf_summary(series) if series.size >= 2 else None
        to_pct = float(np.mean(to_by_strategy.get(name, np.zeros(1)))) * 100.0
        if perf is None:
            continue
        var95, cvar95 = var_cvar(perf.mean, perf.sd)
        perf_rows.append(
            [
                name,
                perf.mean * 100.0,
                perf.sd * 100.0,
                perf.sr,
                perf.mad * 100.0,
                var95 * 100.0,
                cvar95 * 100.0,
                to_pct,
            ]
        )
        if ew_sr is not None and name != "ew":
            try:
                breakeven_rows.append([name, breakeven_cost(perf.sr, ew_sr, to_pct, ew_to)])
            except UndefinedError:
                breakeven_rows.append([name, None])
    _write_csv_atomic(
        os.path.join(out_dir, "performance.csv"),
        ["strategy", "mean", "sd", "sr", "mad", "var95", "cvar95", "to"],
        perf_rows,
    )
    _write_csv_atomic(os.path.join(out_dir, "breakeven.csv"), ["strategy", "c_ew_bps"], breakeven_rows)

    structure_path = os.path.join(results_dir, "structure.csv")
    if os.path.exists(structure_path):
        structure = _read_long_csv(structure_path, ["eig", "mag", "dir"])
        spec_of = {s["name"]: s["cov_spec"] for s in manifest.get("strategies", [])}
        rows = []
        for name, rec in structure.items():
            eig = np.asarray(rec["eig"])
            mag = np.asarray(rec["mag"])
            direction = np.asarray(rec["dir"])
            bench_name = None
            for cand, spec in spec_of.items():
                if cand.startswith("market_") and spec == spec_of.get(name):
                    bench_name = cand
                    break
            pvals = [None, None, None]
            if bench_name and bench_name in structure and bench_name != name:
                bench = structure[bench_name]
                if len(bench["eig"]) == eig.size:
                    pvals = [
                        bootstrap_structure_pvalue(eig, np.asarray(bench["eig"]), seed=manifest["seed"]),
                        bootstrap_structure_pvalue(mag, np.asarray(bench["mag"]), seed=manifest["seed"]),
                        bootstrap_structure_pvalue(direction, np.asarray(bench["dir"]), seed=manifest["seed"]),
                    ]
            rows.append(
                [name, float(eig.mean()), float(mag.mean()), float(direction.mean())] + pvals
            )
        _write_csv_atomic(
            os.path.join(out_dir, "structure_summary.csv"),
            ["strategy", "eig", "mag", "dir", "p_eig", "p_mag", "p_dir"],
            rows,
        )

    for cost in args.costs:
        rows = []
        rate = cost * 1e-4
        for name, series in by_strategy.items():
            to = to_by_strategy.get(name)
            if to is None or series.size < 2:
                continue
            net = series.copy()
            if to.size == series.size - 1:
                net[1:] = apply_transaction_costs(series[1:], to, rate)
            perf = perf_summary(net)
            rows.append([name, perf.mean * 100.0, perf.sd * 100.0, perf.sr, perf.mad * 100.0])
        _write_csv_atomic(
            os.path.join(out_dir, f"net_performance_{cost:g}bps.csv"),
            ["strategy", "mean", "sd", "sr", "mad"],
            rows,
        )

    if args.subperiods:
        if not args.market_factor:
            print("error: --subperiods requires --market-factor", file=sys.stderr)
            return 2
        factors = load_factor_series(args.market_factor)
        some = next(iter(returns.values()))
        dates = some["date"]
        market = factors.rows_for(dates, 1)[:, 0]
        if args.subperiods == "volatility":
            regime = markov_switching_fit(market)
            high = regime.high
        else:
            high, _ = median_split(market)
        rows = []
        for name, series in by_strategy.items():
            for label, mask in (("high", high), ("low", ~high)):
                seg = series[mask]
                if seg.size >= 2 and np.std(seg, ddof=1) > 0:
                    perf = perf_summary(seg)
                    rows.append([name, label, int(seg.size), perf.sd * 100.0, perf.sr])
                else:
                    rows.append([name, label, int(seg.size), None, None])
        _write_csv_atomic(
            os.path.join(out_dir, f"subperiod_{args.subperiods}.csv"),
            ["strategy", "regime", "n_months", "sd", "sr"],
            rows,
        )

    cum_rows = []
    for name, rec in returns.items():
        series = np.asarray(rec["return"], dtype=float)
        cum = np.cumprod(1.0 + series)
        for date, v in zip(rec["date"], cum):
            cum_rows.append([name, date, float(v)])
    _write_csv_atomic(
        os.path.join(out_dir, "plotdata_cum_returns.csv"),
        ["strategy", "date", "cum_return"],
        cum_rows,
    )
    print(f"wrote report tables to {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="factorport",
        description="Latent-factor minimum-variance backtesting engine",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic returns panel CSV")
    p_synth.add_argument("--assets", type=int, required=True)
    p_synth.add_argument("--dates", type=int, required=True)
    p_synth.add_argument("--k", type=int, required=True, help="number of true factors")
    p_synth.add_argument("--noise", type=float, default=0.02)
    p_synth.add_argument("--seed", type=int, required=True)
    p_synth.add_argument("--out", required=True)
    p_synth.set_defaults(func=cmd_synth)

    p_bt = sub.add_parser("backtest", help="run the strategies in a config file")
    p_bt.add_argument("--config", required=True)
    p_bt.add_argument("--out-dir", default=None, help="override the config out_dir")
    p_bt.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_bt.add_argument("--jobs", type=int, default=1)
    p_bt.set_defaults(func=cmd_backtest)

    p_rep = sub.add_parser("report", help="derive tables from a completed run")
    p_rep.add_argument("--results", required=True)
    p_rep.add_argument("--out-dir", default=None)
    p_rep.add_argument("--costs", type=lambda s: [float(v) for v in s.split(",") if v], default=[])
    p_rep.add_argument("--subperiods", choices=["volatility", "median"], default=None)
    p_rep.add_argument("--market-factor", default=None)
    p_rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FactorportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
