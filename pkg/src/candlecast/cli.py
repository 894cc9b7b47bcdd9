"""``candlecast`` command line: ingest, preprocess, train, cross-validate, sweep, predict, backtest, report.

Precedence: built-in defaults < config file (``--config`` or ``$ENGINE_CONFIG``) <
command-line flags. Errors print one JSON line to stderr; exit status is 1 for
runtime errors and 2 for usage errors.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import asdict
from datetime import datetime, timezone

import numpy as np

from . import backtest as bt
from . import market_data as md
from . import pipeline as pl
from . import rnn
from . import validation as val
from .config import ConfigError, EngineConfig, load_config
from .indicators import IndicatorConfig
from .strategies import STRATEGY_NAMES


class CliError(RuntimeError):
    pass


# --------------------------------------------------------------------------- helpers


class _Ctx:
    def __init__(self, args, cfg: EngineConfig):
        self.args = args
        self.cfg = cfg

    def out_path(self, path: str) -> str:
        out_dir = getattr(self.args, "out_dir", None)
        if out_dir and not os.path.isabs(path):
            os.makedirs(out_dir, exist_ok=True)
            path = os.path.join(out_dir, path)
        parent = os.path.dirname(path)
        if parent:
            os.makedirs(parent, exist_ok=True)
        return path

    @property
    def tag(self) -> str:
        return f"config_sha256={self.cfg.sha256} seed={self.cfg.seed}"

    def write_meta(self, path: str, **extra) -> None:
        meta = {
            "artifact": os.path.basename(path),
            "command": self.args.command,
            "config_sha256": self.cfg.sha256,
            "seed": self.cfg.seed,
            "created_at": datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ"),
        }
        meta.update(extra)
        with open(path + ".meta.json", "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_json(self, path: str, doc: dict) -> str:
        path = self.out_path(path)
        doc = dict(doc)
        doc["provenance"] = self.cfg.provenance()
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
        self.write_meta(path)
        return path

    def open_csv(self, path: str):
        path = self.out_path(path)
        return path, open(path, "w", encoding="utf-8", newline="")


def _read_json(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _load_candles(path: str, cfg: EngineConfig) -> md.CandleSeries:
    series = md.read_csv_file(path)
    series.interval = cfg.data.interval
    report = md.validate_series(series)
    return report.repaired


def _candles_arg(ctx: _Ctx) -> str:
    path = getattr(ctx.args, "candles", None) or ctx.cfg.data.candles
    if not path:
        raise CliError("no candle file given (use --candles or data.candles in the config)")
    return path


def _grid(text: str) -> list:
    try:
        return [float(v) if any(c in v for c in ".eE") else int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise CliError(f"bad grid '{text}'") from None


# --------------------------------------------------------------------------- commands


def cmd_ingest(ctx: _Ctx) -> None:
    a, cfg = ctx.args, ctx.cfg
    cutoff = a.cutoff or cfg.data.cutoff
    if a.csv:
        series = md.read_csv_file(a.csv)
        series.interval = cfg.data.interval
    else:
        if not (a.start and a.end):
            raise CliError("ingest needs --csv or both --from and --to")
        series = md.fetch_history(cfg.data.history_endpoint(), a.pair or cfg.data.pair, cfg.data.interval, (a.start, a.end))
    report = md.validate_series(series)
    repaired = md.truncate_before(report.repaired, cutoff)
    path = ctx.out_path(a.out)
    md.write_csv_file(repaired, path, ctx.tag)
    ctx.write_meta(
        path,
        candles=len(repaired),
        duplicates=len(report.duplicates),
        gaps=len(report.gaps),
        non_monotonic=len(report.non_monotonic),
        misaligned=len(report.misaligned),
    )
    print(json.dumps({"candles": len(repaired), "gaps": len(report.gaps), "duplicates": len(report.duplicates)}))


def cmd_preprocess(ctx: _Ctx) -> None:
    a, cfg = ctx.args, ctx.cfg
    series = _load_candles(a.inp, cfg)
    art = pl.prepare(series, cfg.indicators, cfg.cv.split_ratio)
    mpath = ctx.out_path(a.out)
    pl.save_matrix(mpath, art.normalized)
    ctx.write_meta(mpath, shape=list(art.normalized.values.shape))
    extra = {
        "train_columns": art.train_columns,
        "t0": art.normalized.t0,
        "interval": art.normalized.interval,
        "stages": list(art.stages),
        "indicators": asdict(art.config),
        "provenance": cfg.provenance(),
    }
    spath = ctx.out_path(a.stats)
    pl.save_stats(spath, art.stats, extra)
    ctx.write_meta(spath)


def cmd_train(ctx: _Ctx) -> None:
    a, cfg = ctx.args, ctx.cfg
    stats, stats_doc = pl.load_stats(a.stats)
    m = pl.load_matrix(a.matrix, stats.feature_names)
    p_cols = int(stats_doc.get("train_columns", m.n_columns))
    h = cfg.hyperparameters
    params, log = rnn.train(m.values[:, :p_cols], h)
    extra = {
        "indicators": stats_doc.get("indicators", asdict(cfg.indicators)),
        "interval": stats_doc.get("interval", cfg.data.interval),
        "train_columns": p_cols,
        "epoch_losses": log.epoch_losses,
        "provenance": cfg.provenance(),
    }
    path = ctx.out_path(a.out)
    rnn.save_checkpoint(params, stats, h, path, adam=log.adam_state if a.save_optimizer else None, extra=extra)
    ctx.write_meta(path, epochs=log.epochs_run, final_loss=log.epoch_losses[-1] if log.epoch_losses else None)


def cmd_cross_validate(ctx: _Ctx) -> None:
    a, cfg = ctx.args, ctx.cfg
    series = _load_candles(_candles_arg(ctx), cfg)
    m = pl.stationary_features(series, cfg.indicators)
    cv = val.CvConfig(**{**asdict(cfg.cv), **({"k": a.k} if a.k is not None else {})})
    report = val.tskcv(m, cfg.hyperparameters, cv)
    path, fh = ctx.open_csv(a.report)
    with fh:
        val.write_cv_csv(report, fh, ctx.tag)
    ctx.write_meta(path, cycles=report.n_cycles, rmse=dict(zip(val.CHANNELS, report.rmse.tolist())))


def cmd_sweep(ctx: _Ctx) -> None:
    a, cfg = ctx.args, ctx.cfg
    series = _load_candles(_candles_arg(ctx), cfg)
    m = pl.stationary_features(series, cfg.indicators)
    report = val.sweep(m, cfg.hyperparameters, a.param, _grid(a.grid), cfg.cv)
    path, fh = ctx.open_csv(a.report)
    with fh:
        val.write_sweep_csv(report, fh, ctx.tag)
    ctx.write_meta(path)


def _bundle_indicators(bundle: rnn.ModelBundle) -> IndicatorConfig:
    return IndicatorConfig(**bundle.extra.get("indicators", {}))


def cmd_predict(ctx: _Ctx) -> None:
    a, cfg = ctx.args, ctx.cfg
    series = _load_candles(_candles_arg(ctx), cfg)
    bundle = rnn.load_checkpoint(a.model)
    norm = pl.apply_normalization(pl.stationary_features(series, _bundle_indicators(bundle)), bundle.stats)
    rho = bundle.hyper.rho
    if norm.n_columns < rho:
        raise CliError(f"need {rho} stationary columns, candle file yields {norm.n_columns}")
    y = bundle.predict_next(norm.values[:, -rho:])
    c = pl.reconstruct_prediction(y, bundle.stats, series[-1], series.interval)
    doc = {"timestamp": c.timestamp, "open": c.open, "high": c.high, "low": c.low, "close": c.close}
    if a.out:
        ctx.write_json(a.out, doc)
    print(json.dumps(doc))


def _strategies(text: str) -> list:
    names = list(STRATEGY_NAMES) if text == "all" else [s.strip() for s in text.split(",") if s.strip()]
    for n in names:
        if n not in STRATEGY_NAMES:
            raise CliError(f"unknown strategy '{n}'")
    return names


def cmd_backtest(ctx: _Ctx) -> None:
    a, cfg = ctx.args, ctx.cfg
    names = _strategies(a.strategy or cfg.strategy.name)
    if len(names) > 1 and not a.out_dir:
        raise CliError("several strategies need --out-dir")
    rules = cfg.rules
    if a.rules:
        rules = bt.ExecutionRules(**{**asdict(rules), **_read_json(a.rules)})
    series = _load_candles(_candles_arg(ctx), cfg)
    bundle = rnn.load_checkpoint(a.model)
    scfg = cfg.strategy.strategy_config()
    icfg = _bundle_indicators(bundle)
    n = len(series)
    earliest = max(bt.min_start(bundle, s, scfg, icfg) for s in names)
    start = max(earliest, int(math.floor(cfg.backtest.start_fraction * n)))
    if start >= n:
        raise CliError(f"insufficient data: backtest would start at period {start} of {n}")
    preds = bt.predicted_closes(series, bundle, start, icfg)
    single = len(names) == 1
    for name in names:
        res = bt.run_backtest(
            series, bundle, name, rules, cfg.backtest.initial_quote,
            start=start, strategy_cfg=scfg, seed=cfg.seed, predictions=preds,
        )  # fmt: skip
        eq = a.out if single and a.out else f"equity_{name}.csv"
        tr = a.trades if single and a.trades else f"trades_{name}.csv"
        sm = a.summary if single and a.summary else f"summary_{name}.json"
        path, fh = ctx.open_csv(eq)
        with fh:
            bt.write_equity_csv(res.curve, fh, ctx.tag)
        ctx.write_meta(path)
        path, fh = ctx.open_csv(tr)
        with fh:
            bt.write_trades_csv(res.trades, fh, ctx.tag)
        ctx.write_meta(path)
        windows = bt.sharpe_monthly(res.curve, cfg.backtest.rf_annual, cfg.backtest.sharpe_window_days)
        ctx.write_json(sm, {**res.summary, "sharpe": bt.sharpe_rows(windows)})
    alpha_path = a.alpha or (None if single else "alpha.csv")
    if alpha_path:
        curve = bt.alpha_baseline(series, cfg.backtest.initial_quote, rules, start)
        path, fh = ctx.open_csv(alpha_path)
        with fh:
            bt.write_equity_csv(curve, fh, ctx.tag)
        ctx.write_meta(path)


def _read_curve(path: str) -> bt.EquityCurve:
    with open(path, encoding="utf-8") as fh:
        try:
            return bt.read_equity_csv(fh)
        except bt.BacktestError as exc:
            raise CliError(f"{path}: {exc}") from None


def cmd_report(ctx: _Ctx) -> None:
    a, cfg = ctx.args, ctx.cfg
    if not (a.equity or a.cv):
        raise CliError("report needs --equity and/or --cv inputs")
    if a.equity:
        eq = _read_curve(a.equity)
        alpha = _read_curve(a.alpha) if a.alpha else None
        if alpha is not None and not np.array_equal(eq.timestamps, alpha.timestamps):
            raise CliError("column 'timestamp' differs between equity and alpha inputs")
        path, fh = ctx.open_csv(a.out or "growth.csv")
        with fh:
            fh.write(f"# {ctx.tag}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["timestamp", "equity"] + (["alpha", "difference"] if alpha is not None else []))
            for i, ts in enumerate(eq.timestamps):
                row = [int(ts), format(eq.values[i], ".17g")]
                if alpha is not None:
                    row += [format(alpha.values[i], ".17g"), format(eq.values[i] - alpha.values[i], ".17g")]
                w.writerow(row)
        ctx.write_meta(path)
        if a.sharpe_out:
            curves = {"equity": eq} | ({"alpha": alpha} if alpha is not None else {})
            tables = {k: bt.sharpe_monthly(c, cfg.backtest.rf_annual, cfg.backtest.sharpe_window_days) for k, c in curves.items()}
            path, fh = ctx.open_csv(a.sharpe_out)
            with fh:
                fh.write(f"# {ctx.tag}\n")
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["window", "start_timestamp", "end_timestamp", *(f"sharpe_{k}" for k in tables)])
                for i, win in enumerate(tables["equity"]):
                    vals = ["" if t[i].sharpe is None else format(t[i].sharpe, ".17g") for t in tables.values()]
                    w.writerow([i, win.start_timestamp, win.end_timestamp, *vals])
            ctx.write_meta(path)
    if a.cv:
        rows = []
        for p in a.cv:
            with open(p, encoding="utf-8") as fh:
                try:
                    rows.append(val.read_cv_csv(fh))
                except val.ValidationError as exc:
                    raise CliError(f"{p}: {exc}") from None
        rows.sort(key=lambda r: r["k"])
        path, fh = ctx.open_csv(a.cv_out or "cv_rmse.csv")
        with fh:
            fh.write(f"# {ctx.tag}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["k", "cycles", *val.CHANNELS])
            for r in rows:
                w.writerow([r["k"], r["cycles"], *(format(v, ".17g") for v in r["rmse"])])
        ctx.write_meta(path)


COMMANDS = {
    "ingest": cmd_ingest,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "cross-validate": cmd_cross_validate,
    "sweep": cmd_sweep,
    "predict": cmd_predict,
    "backtest": cmd_backtest,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="engine config JSON (falls back to $ENGINE_CONFIG)")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--out-dir", help="directory for relative output paths")

    parser = argparse.ArgumentParser(prog="candlecast", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="fetch or import candles, repair, truncate, write CSV")
    p.add_argument("--pair")
    p.add_argument("--from", dest="start")
    p.add_argument("--to", dest="end")
    p.add_argument("--csv")
    p.add_argument("--cutoff")
    p.add_argument("--out", default="candles.csv")

    p = sub.add_parser("preprocess", parents=[common], help="build the normalized stationary matrix")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", default="matrix.bin")
    p.add_argument("--stats", default="stats.json")

    p = sub.add_parser("train", parents=[common], help="train the forecaster")
    p.add_argument("--matrix", required=True)
    p.add_argument("--stats", required=True)
    p.add_argument("--out", default="model.json")
    p.add_argument("--save-optimizer", action="store_true")

    p = sub.add_parser("cross-validate", parents=[common], help="walk-forward validation")
    p.add_argument("--candles")
    p.add_argument("--k", type=int)
    p.add_argument("--report", default="cv.csv")

    p = sub.add_parser("sweep", parents=[common], help="one-parameter sweep of walk-forward RMSE")
    p.add_argument("--candles")
    p.add_argument("--param", required=True, choices=sorted(val.SWEEPABLE))
    p.add_argument("--grid", required=True)
    p.add_argument("--report", default="sweep.csv")

    p = sub.add_parser("predict", parents=[common], help="predict the next candle")
    p.add_argument("--candles")
    p.add_argument("--model", required=True)
    p.add_argument("--out")

    p = sub.add_parser("backtest", parents=[common], help="simulate trading")
    p.add_argument("--candles")
    p.add_argument("--model", required=True)
    p.add_argument("--strategy", help="one of %s, a comma list, or 'all'" % "|".join(STRATEGY_NAMES))
    p.add_argument("--rules")
    p.add_argument("--out")
    p.add_argument("--trades")
    p.add_argument("--summary")
    p.add_argument("--alpha")

    p = sub.add_parser("report", parents=[common], help="plot-ready tables")
    p.add_argument("--equity")
    p.add_argument("--alpha")
    p.add_argument("--out")
    p.add_argument("--sharpe-out")
    p.add_argument("--cv", nargs="+")
    p.add_argument("--cv-out")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 with usage on bad flags
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        COMMANDS[args.command](_Ctx(args, cfg))
    except (CliError, ConfigError, ValueError, OSError, KeyError) as exc:
        err = {"command": args.command, "error": type(exc).__name__, "message": str(exc).splitlines()[0] if str(exc) else ""}
        print(json.dumps(err), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
