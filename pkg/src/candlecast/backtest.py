"""Spot BTC/USDT trading simulation, equity curves and windowed Sharpe ratios.

Orders fill at the current period's close with no slippage.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .indicators import IndicatorConfig
from .market_data import CandleSeries
from .pipeline import OHLC_ROWS, apply_normalization, build_features, denormalize, difference
from .rnn import ModelBundle, predict_batch
from .strategies import Signal, StrategyConfig, make_strategy, warmup_closes

log = logging.getLogger(__name__)

SECONDS_PER_YEAR = 365 * 86400


class BacktestError(ValueError):
    pass


@dataclass
class Portfolio:
    base_qty: float = 0.0
    quote_qty: float = 10_000.0

    def value(self, price: float) -> float:
        return portfolio_value(self, price)


@dataclass
class ExecutionRules:
    fee_rate: float = 0.001
    max_fraction: float = 0.25
    min_trade_notional: float = 10.0
    gain_gate_enabled: bool = True

    def __post_init__(self):
        if not 0 <= self.fee_rate < 1:
            raise BacktestError("fee_rate must lie in [0, 1)")
        if not 0 < self.max_fraction <= 1:
            raise BacktestError("max_fraction must lie in (0, 1]")


@dataclass
class Trade:
    timestamp: int
    side: str  # "buy" or "sell" (of base)
    base_qty: float
    price: float
    fee_paid: float
    portfolio_value_after: float
    notional: float = 0.0  # quote amount committed (buy) or base value sold (sell)


@dataclass
class EquityCurve:
    timestamps: np.ndarray
    values: np.ndarray
    interval: int = 3600

    def __len__(self) -> int:
        return len(self.values)


@dataclass
class BacktestResult:
    curve: EquityCurve
    trades: list
    summary: dict
    base_qty: np.ndarray = field(default_factory=lambda: np.zeros(0))
    quote_qty: np.ndarray = field(default_factory=lambda: np.zeros(0))
    signals: list = field(default_factory=list)


def portfolio_value(p: Portfolio, price: float) -> float:
    if price <= 0:
        raise BacktestError("price must be positive")
    return p.quote_qty + p.base_qty * price


def execute_signal(
    p: Portfolio,
    sig: Signal,
    price: float,
    expected_change: float,
    rules: ExecutionRules,
    timestamp: int = 0,
):
    """Apply one signal under the cap, gain gate and minimum-notional rules.

    Returns ``(new_portfolio, trade_or_None)``; the input portfolio is not mutated.
    """
    if price <= 0:
        raise BacktestError("price must be positive")
    if sig == Signal.HOLD:
        return Portfolio(p.base_qty, p.quote_qty), None
    if rules.gain_gate_enabled and abs(expected_change) <= rules.fee_rate:
        log.debug("skip %s at %d: expected change %.6f within fee", sig.value, timestamp, expected_change)
        return Portfolio(p.base_qty, p.quote_qty), None
    value = portfolio_value(p, price)
    cap = rules.max_fraction * value
    f = rules.fee_rate
    if sig == Signal.BUY:
        notional = min(p.quote_qty, cap)
        if notional < rules.min_trade_notional or notional <= 0:
            return Portfolio(p.base_qty, p.quote_qty), None
        bought = notional * (1.0 - f) / price
        new = Portfolio(p.base_qty + bought, max(p.quote_qty - notional, 0.0))
        fee = f * notional
        return new, Trade(timestamp, "buy", bought, price, fee, portfolio_value(new, price), notional)
    sold = min(p.base_qty, cap / price)
    notional = sold * price
    if sold <= 0 or notional < rules.min_trade_notional:
        return Portfolio(p.base_qty, p.quote_qty), None
    new = Portfolio(max(p.base_qty - sold, 0.0), p.quote_qty + notional * (1.0 - f))
    fee = f * notional
    return new, Trade(timestamp, "sell", sold, price, fee, portfolio_value(new, price), notional)


def _convert_all(p: Portfolio, price: float, rules: ExecutionRules, timestamp: int):
    """Buy-and-hold entry: the whole quote balance, no cap and no gate."""
    if p.quote_qty <= 0:
        return Portfolio(p.base_qty, p.quote_qty), None
    notional = p.quote_qty
    bought = notional * (1.0 - rules.fee_rate) / price
    new = Portfolio(p.base_qty + bought, 0.0)
    return new, Trade(timestamp, "buy", bought, price, rules.fee_rate * notional, portfolio_value(new, price), notional)


def alpha_baseline(
    series: CandleSeries, initial_quote: float = 10_000.0, rules: Optional[ExecutionRules] = None, start: int = 0
) -> EquityCurve:
    """Convert everything to base at ``series[start]``'s close and hold."""
    if len(series) == 0 or start >= len(series):
        raise BacktestError("alpha baseline needs a non-empty series")
    rules = rules or ExecutionRules()
    closes = series.closes[start:]
    p, _ = _convert_all(Portfolio(0.0, initial_quote), closes[0], rules, 0)
    values = p.quote_qty + p.base_qty * closes
    return EquityCurve(series.timestamps[start:], values, series.interval)


def predicted_closes(series: CandleSeries, bundle: ModelBundle, start: int, indicator_cfg=None) -> np.ndarray:
    """Predicted next close for every period ``t >= start`` using candles ``<= t`` only.

    Entry ``j`` corresponds to period ``start + j``. Indicators are causal and the
    normalization stats are frozen, so computing features over the full series once
    is equivalent to recomputing them on each prefix.
    """
    cfg = indicator_cfg or IndicatorConfig(**bundle.extra.get("indicators", {}))
    rho = bundle.hyper.rho
    feats = build_features(series, cfg)
    w = len(series) - feats.n_columns  # candle index of feature column 0
    if start < w + rho:
        raise BacktestError(f"period {start} has fewer than rho = {rho} stationary columns of history")
    norm = apply_normalization(difference(feats), bundle.stats).values
    # diff column j describes the move into candle w + 1 + j
    ends = np.arange(start, len(series)) - w - 1
    closes = series.closes
    out = np.empty(len(ends))
    chunk = 256
    for lo in range(0, len(ends), chunk):
        idx = ends[lo : lo + chunk]
        windows = np.stack([norm[:, e - rho + 1 : e + 1] for e in idx])
        y = predict_batch(bundle.params, windows, bundle.hyper.cell_form)
        diff = denormalize(y[:, :OHLC_ROWS].T, bundle.stats, range(OHLC_ROWS))[3]
        out[lo : lo + chunk] = closes[idx + w + 1] + diff
    return out


def min_start(bundle: ModelBundle, strategy: str, strategy_cfg: StrategyConfig, indicator_cfg) -> int:
    w = indicator_cfg.warmup
    return max(w + bundle.hyper.rho, warmup_closes(strategy, strategy_cfg) - 1)


def run_backtest(
    series: CandleSeries,
    bundle: Optional[ModelBundle],
    strategy: str,
    rules: Optional[ExecutionRules] = None,
    initial_quote: float = 10_000.0,
    *,
    start: Optional[int] = None,
    strategy_cfg: Optional[StrategyConfig] = None,
    seed: int = 0,
    predictions: Optional[np.ndarray] = None,
    access_log: Optional[list] = None,
) -> BacktestResult:
    """Walk forward from period ``start`` to the end of ``series``.

    At each period: predict the next close from candles up to now, ask the
    strategy, execute at the current close, mark to market. ``predictions`` may
    carry precomputed :func:`predicted_closes` output (shared across strategies).
    ``access_log`` receives ``(period, last_candle_index_read)`` per decision.
    """
    rules = rules or ExecutionRules()
    scfg = strategy_cfg or StrategyConfig()
    n = len(series)
    if predictions is None and bundle is None:
        raise BacktestError("need a model bundle or precomputed predictions")
    if start is None:
        icfg = IndicatorConfig(**bundle.extra.get("indicators", {})) if bundle is not None else IndicatorConfig()
        start = min_start(bundle, strategy, scfg, icfg) if bundle is not None else 0
    if start >= n:
        raise BacktestError(f"insufficient data: start period {start} is beyond the {n}-candle series")
    if strategy != "buyhold" and start + 1 < warmup_closes(strategy, scfg):
        raise BacktestError(f"insufficient data: {strategy} needs more history before period {start}")
    if predictions is None:
        predictions = predicted_closes(series, bundle, start)
    if len(predictions) != n - start:
        raise BacktestError("predictions do not cover the backtest span")

    decide = make_strategy(strategy, scfg, seed)
    closes = series.closes
    stamps = series.timestamps
    p = Portfolio(0.0, float(initial_quote))
    trades, signals = [], []
    values = np.empty(n - start)
    base = np.empty(n - start)
    quote = np.empty(n - start)
    for step, t in enumerate(range(start, n)):
        price = closes[t]
        pred = predictions[step]
        history = closes[: t + 1]
        if access_log is not None:
            access_log.append((t, len(history) - 1))
        sig = decide(step, history, pred)
        signals.append(sig)
        if strategy == "buyhold":
            p, trade = _convert_all(p, price, rules, int(stamps[t])) if sig == Signal.BUY else (p, None)
        else:
            expected = (pred - price) / price
            p, trade = execute_signal(p, sig, price, expected, rules, int(stamps[t]))
        if trade is not None:
            trades.append(trade)
        values[step] = portfolio_value(p, price)
        base[step], quote[step] = p.base_qty, p.quote_qty

    curve = EquityCurve(stamps[start:], values, series.interval)
    summary = {
        "strategy": strategy,
        "initial_quote": float(initial_quote),
        "final_value": float(values[-1]),
        "n_trades": len(trades),
        "total_fees": float(sum(tr.fee_paid for tr in trades)),
        "start_timestamp": int(stamps[start]),
        "end_timestamp": int(stamps[-1]),
        "rules": asdict(rules),
    }
    return BacktestResult(curve, trades, summary, base, quote, signals)


# --------------------------------------------------------------------------- Sharpe


@dataclass
class SharpeWindow:
    start_timestamp: int
    end_timestamp: int
    mean_return: float
    std_return: float
    sharpe: Optional[float]  # None when the window has zero variance


def sharpe_monthly(
    curve: EquityCurve, rf_annual: float = 0.02, window_days: float = 30, interval: Optional[int] = None
) -> list:
    """Sharpe ratio per consecutive ``window_days`` block anchored at the curve start.

    Uses per-period simple returns, a linearly prorated per-period risk-free rate
    and the population standard deviation. Only complete windows are reported.
    """
    if len(curve) == 0:
        raise BacktestError("empty equity curve")
    interval = interval or curve.interval
    per_window = int(round(window_days * 86400 / interval))
    rf = rf_annual * interval / SECONDS_PER_YEAR
    values = np.asarray(curve.values, dtype=float)
    out = []
    for k in range((len(values) - 1) // per_window):
        seg = values[k * per_window : (k + 1) * per_window + 1]
        r = seg[1:] / seg[:-1] - 1.0
        mean = float(r.mean())
        std = float(r.std())
        sharpe = None if std == 0.0 else (mean - rf) / std
        out.append(
            SharpeWindow(
                int(curve.timestamps[k * per_window]), int(curve.timestamps[(k + 1) * per_window]), mean, std, sharpe
            )
        )
    return out


# --------------------------------------------------------------------------- CSV output


def _g(x) -> str:
    return format(float(x), ".17g")


def write_equity_csv(curve: EquityCurve, fh, header_comment: Optional[str] = None) -> None:
    if header_comment:
        fh.write(f"# {header_comment}\n")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["timestamp", "value"])
    for ts, v in zip(curve.timestamps, curve.values):
        w.writerow([int(ts), _g(v)])


def read_equity_csv(fh, interval: int = 3600) -> EquityCurve:
    rows = list(csv.DictReader(ln for ln in fh if not ln.startswith("#")))
    if not rows:
        raise BacktestError("equity file has no rows")
    for col in ("timestamp", "value"):
        if col not in rows[0]:
            raise BacktestError(f"equity file: missing column '{col}'")
    ts = np.array([int(r["timestamp"]) for r in rows], dtype=np.int64)
    if len(ts) > 1:
        interval = int(ts[1] - ts[0])
    return EquityCurve(ts, np.array([float(r["value"]) for r in rows]), interval)


def write_trades_csv(trades, fh, header_comment: Optional[str] = None) -> None:
    if header_comment:
        fh.write(f"# {header_comment}\n")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["timestamp", "side", "base_qty", "price", "fee", "value_after"])
    for t in trades:
        w.writerow([t.timestamp, t.side, _g(t.base_qty), _g(t.price), _g(t.fee_paid), _g(t.portfolio_value_after)])


def sharpe_rows(windows) -> list:
    return [
        {
            "start_timestamp": w.start_timestamp,
            "end_timestamp": w.end_timestamp,
            "mean_return": w.mean_return,
            "std_return": w.std_return,
            "sharpe": w.sharpe,
        }
        for w in windows
    ]
