import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from candlecast.backtest import (
    SECONDS_PER_YEAR,
    BacktestError,
    EquityCurve,
    ExecutionRules,
    Portfolio,
    alpha_baseline,
    execute_signal,
    min_start,
    portfolio_value,
    predicted_closes,
    read_equity_csv,
    run_backtest,
    sharpe_monthly,
    write_equity_csv,
    write_trades_csv,
)
from candlecast.indicators import IndicatorConfig
from candlecast.market_data import Candle, CandleSeries
from candlecast.strategies import STRATEGY_NAMES, Signal, StrategyConfig

RULES = ExecutionRules()


def series_from_closes(closes, t0=0, interval=3600):
    return CandleSeries([Candle(t0 + i * interval, c, c, c, c) for i, c in enumerate(closes)], interval)


@pytest.fixture(scope="module")
def rsi_run(candles_1000, small_bundle):
    return run_backtest(candles_1000, small_bundle, "rsi", RULES)


# --------------------------------------------------------------------------- portfolio / execution


def test_portfolio_value_examples():
    assert portfolio_value(Portfolio(1.0, 0.0), 10_000.0) == 10_000.0
    assert portfolio_value(Portfolio(0.0, 10_000.0), 123.0) == 10_000.0
    assert portfolio_value(Portfolio(0.5, 2500.0), 9000.0) == 7000.0


def test_buy_example():
    p, tr = execute_signal(Portfolio(0.0, 10_000.0), Signal.BUY, 10_000.0, 0.01, RULES)
    assert p.base_qty == pytest.approx(0.249750, abs=1e-15)
    assert p.quote_qty == 7500.0
    assert tr.notional == 2500.0 and tr.fee_paid == pytest.approx(2.5, abs=1e-12) and tr.side == "buy"


def test_gain_gate_and_empty_sell():
    p0 = Portfolio(0.0, 10_000.0)
    p, tr = execute_signal(p0, Signal.BUY, 10_000.0, 0.0005, RULES)
    assert tr is None and p == p0
    p, tr = execute_signal(p0, Signal.SELL, 10_000.0, -0.05, RULES)
    assert tr is None and p == p0
    p, tr = execute_signal(p0, Signal.BUY, 10_000.0, 0.0005, ExecutionRules(gain_gate_enabled=False))
    assert tr is not None


def test_min_notional_and_hold():
    p0 = Portfolio(0.0001, 5.0)
    assert execute_signal(p0, Signal.BUY, 100.0, 0.1, RULES)[1] is None
    assert execute_signal(p0, Signal.SELL, 100.0, -0.1, RULES)[1] is None
    assert execute_signal(Portfolio(1, 1), Signal.HOLD, 100.0, 0.5, RULES)[1] is None


def test_sell_capped_by_portfolio_value():
    p, tr = execute_signal(Portfolio(1.0, 0.0), Signal.SELL, 1000.0, -0.01, RULES)
    assert tr.base_qty == 0.25 and p.quote_qty == pytest.approx(250 * 0.999, rel=1e-15)


@pytest.mark.parametrize("bad", [dict(fee_rate=1.0), dict(fee_rate=-0.1), dict(max_fraction=0), dict(max_fraction=1.5)])
def test_rules_validation(bad):
    with pytest.raises(BacktestError):
        ExecutionRules(**bad)


@settings(max_examples=200, deadline=None)
@given(
    st.floats(0, 10), st.floats(0, 1e5), st.floats(1, 1e5), st.floats(-0.2, 0.2),
    st.sampled_from(list(Signal)), st.floats(0, 0.05), st.floats(0.01, 1.0),
)  # fmt: skip
def test_execution_properties(base, quote, price, change, sig, fee, frac):
    rules = ExecutionRules(fee_rate=fee, max_fraction=frac)
    before = Portfolio(base, quote)
    v0 = portfolio_value(before, price)
    after, tr = execute_signal(before, sig, price, change, rules)
    assert after.base_qty >= 0 and after.quote_qty >= 0
    v1 = portfolio_value(after, price)
    if tr is None:
        assert v1 == v0
    else:
        assert tr.base_qty > 0
        assert tr.notional <= frac * v0 + 1e-9
        assert tr.fee_paid == fee * tr.notional
        assert abs(v0 - tr.fee_paid - v1) <= 1e-9 * max(1.0, v0)


# --------------------------------------------------------------------------- runs


def test_rsi_accounting_conservation(candles_1000, rsi_run):
    res = rsi_run
    closes = candles_1000.closes[-len(res.curve) :]
    fees = {tr.timestamp: tr.fee_paid for tr in res.trades}
    assert res.trades, "fixture should trade"
    dv = np.diff(res.curve.values)
    mtm = res.base_qty[:-1] * np.diff(closes)
    fee = np.array([fees.get(int(ts), 0.0) for ts in res.curve.timestamps[1:]])
    assert np.max(np.abs(dv - (mtm - fee))) <= 1e-9
    np.testing.assert_array_equal(res.curve.values, res.quote_qty + res.base_qty * closes)
    assert np.all(res.base_qty >= 0) and np.all(res.quote_qty >= 0)


def test_rsi_trades_respect_cap_and_fee(candles_1000, rsi_run):
    res = rsi_run
    start = len(candles_1000) - len(res.curve)
    values = dict(zip(res.curve.timestamps.tolist(), res.curve.values.tolist()))
    index_of = {int(c.timestamp): i for i, c in enumerate(candles_1000)}
    for tr in res.trades:
        step = index_of[tr.timestamp] - start
        # value before the trade: last period's holdings at this period's close
        held_base = res.base_qty[step - 1] if step > 0 else 0.0
        held_quote = res.quote_qty[step - 1] if step > 0 else 10_000.0
        pre_value = held_quote + held_base * tr.price
        assert tr.notional <= 0.25 * pre_value + 1e-9
        assert tr.fee_paid == 0.001 * tr.notional
        assert values[tr.timestamp] == tr.portfolio_value_after


def test_gate_blocks_small_expected_moves(candles_1000, small_bundle):
    start = min_start(small_bundle, "roc", StrategyConfig(), IndicatorConfig())
    preds = predicted_closes(candles_1000, small_bundle, start)
    closes = candles_1000.closes[start:]
    expected = (preds - closes) / closes
    res = run_backtest(candles_1000, small_bundle, "roc", RULES, predictions=preds, start=start)
    traded = {tr.timestamp for tr in res.trades}
    for step, ts in enumerate(res.curve.timestamps):
        if int(ts) in traded:
            assert abs(expected[step]) > RULES.fee_rate


def test_no_look_ahead_prefix(candles_1000, small_bundle):
    start = 300
    full_pred = predicted_closes(candles_1000, small_bundle, start)
    for cut in (450, 700):
        prefix = candles_1000[:cut]
        np.testing.assert_array_equal(predicted_closes(prefix, small_bundle, start), full_pred[: cut - start])
        a = run_backtest(prefix, small_bundle, "macd", start=start)
        b = run_backtest(candles_1000, small_bundle, "macd", start=start)
        np.testing.assert_array_equal(a.curve.values, b.curve.values[: cut - start])
    log = []
    run_backtest(candles_1000, small_bundle, "rsi", start=start, predictions=full_pred, access_log=log)
    assert all(last == t for t, last in log)


def test_buyhold_equals_alpha(candles_1000, small_bundle):
    start = 400
    for rules in (RULES, ExecutionRules(fee_rate=0.0)):
        bh = run_backtest(candles_1000, small_bundle, "buyhold", rules, start=start)
        alpha = alpha_baseline(candles_1000, 10_000.0, rules, start=start)
        np.testing.assert_array_equal(bh.curve.values, alpha.values)
        assert len(bh.trades) == 1


def test_buyhold_final_values(candles_1000, small_bundle):
    start = 400
    c0, cT = candles_1000.closes[start], candles_1000.closes[-1]
    free = run_backtest(candles_1000, small_bundle, "buyhold", ExecutionRules(fee_rate=0.0), start=start)
    assert free.summary["final_value"] == 10_000.0 / c0 * cT
    paid = run_backtest(candles_1000, small_bundle, "buyhold", RULES, start=start)
    assert paid.summary["final_value"] == pytest.approx(10_000.0 * 0.999 * cT / c0, rel=1e-12)
    assert paid.summary["total_fees"] == pytest.approx(10.0, rel=1e-12)


def test_alpha_examples():
    flat = series_from_closes([50.0] * 10)
    np.testing.assert_array_equal(alpha_baseline(flat, 1000.0, ExecutionRules(fee_rate=0.0)).values, 1000.0)
    double = series_from_closes([100.0, 150.0, 200.0])
    assert alpha_baseline(double, 1000.0, ExecutionRules(fee_rate=0.0)).values[-1] == 2000.0
    with pytest.raises(BacktestError):
        alpha_baseline(CandleSeries([]), 1.0)


def test_random_deterministic(candles_1000, small_bundle):
    a = run_backtest(candles_1000, small_bundle, "random", seed=7)
    b = run_backtest(candles_1000, small_bundle, "random", seed=7)
    np.testing.assert_array_equal(a.curve.values, b.curve.values)
    assert a.trades == b.trades
    c = run_backtest(candles_1000, small_bundle, "random", seed=8)
    assert a.signals != c.signals


@pytest.mark.parametrize("strategy", STRATEGY_NAMES)
def test_every_strategy_runs(candles_1000, small_bundle, strategy):
    res = run_backtest(candles_1000, small_bundle, strategy)
    assert res.summary["n_trades"] == len(res.trades)
    assert np.all(np.isfinite(res.curve.values))


def test_insufficient_data(candles_1000, small_bundle):
    with pytest.raises(BacktestError):
        run_backtest(candles_1000[:40], small_bundle, "rsi")
    with pytest.raises(BacktestError, match="rho"):
        predicted_closes(candles_1000, small_bundle, 10)


# --------------------------------------------------------------------------- Sharpe


def curve_from_returns(returns, v0=10_000.0):
    values = v0 * np.cumprod(np.r_[1.0, 1.0 + np.asarray(returns)])
    return EquityCurve(np.arange(len(values)) * 3600, values, 3600)


def test_sharpe_matches_two_pass_oracle():
    rng = np.random.default_rng(21)
    curve = curve_from_returns(rng.normal(2e-4, 3e-3, 3 * 720 + 50))
    windows = sharpe_monthly(curve)
    assert len(windows) == 3
    rf = 0.02 * 3600 / SECONDS_PER_YEAR
    for k, w in enumerate(windows):
        seg = curve.values[k * 720 : (k + 1) * 720 + 1].tolist()
        assert w.sharpe == pytest.approx(oracles.sharpe_two_pass(seg, rf), rel=1e-9)
        assert w.start_timestamp == curve.timestamps[k * 720]


def test_sharpe_degenerate_cases():
    flat = EquityCurve(np.arange(721) * 3600, np.full(721, 5.0), 3600)
    assert sharpe_monthly(flat)[0].sharpe is None
    rf = 0.02 * 3600 / SECONDS_PER_YEAR
    sym = curve_from_returns([rf + 0.01, rf - 0.01] * 360)
    assert abs(sharpe_monthly(sym)[0].sharpe) < 1e-9
    assert sharpe_monthly(curve_from_returns([0.001] * 100)) == []
    with pytest.raises(BacktestError):
        sharpe_monthly(EquityCurve(np.array([], dtype=np.int64), np.array([]), 3600))


def test_equity_and_trades_csv(rsi_run):
    buf = io.StringIO()
    write_equity_csv(rsi_run.curve, buf, header_comment="seed=0")
    back = read_equity_csv(io.StringIO(buf.getvalue()))
    np.testing.assert_array_equal(back.values, rsi_run.curve.values)
    np.testing.assert_array_equal(back.timestamps, rsi_run.curve.timestamps)
    buf = io.StringIO()
    write_trades_csv(rsi_run.trades, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "timestamp,side,base_qty,price,fee,value_after"
    assert len(lines) == 1 + len(rsi_run.trades)
