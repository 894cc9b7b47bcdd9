"""Acceptance gate: one test per criterion, each printing a single PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -v -s`` to see the lines inline; they are
also echoed (uncaptured) during a normal run.
"""
import filecmp
import json
import math
import time

import numpy as np
import pytest

import oracles
from candlecast import bundled_candles_path
from candlecast import indicators as ind
from candlecast.backtest import (
    SECONDS_PER_YEAR,
    EquityCurve,
    ExecutionRules,
    alpha_baseline,
    min_start,
    predicted_closes,
    run_backtest,
    sharpe_monthly,
)
from candlecast.cli import main
from candlecast.indicators import IndicatorConfig
from candlecast.market_data import read_csv_file
from candlecast.pipeline import (
    FeatureMatrix,
    apply_normalization,
    denormalize,
    difference,
    integrate,
    normalize_rows,
    split_index,
    stationary_features,
)
from candlecast.rnn import (
    PARAM_NAMES,
    AdamState,
    Hyperparameters,
    LstmState,
    NetworkParameters,
    adam_step,
    bptt_gradients,
    forward_sequence,
    init_params,
    mse,
)
from candlecast.strategies import StrategyConfig
from candlecast.validation import CvConfig, tskcv


@pytest.fixture
def verdict(capsys):
    def emit(number, title, ok, detail=""):
        with capsys.disabled():
            print(f"\n[criterion {number:>2}] {'PASS' if ok else 'FAIL'}  {title}" + (f"  ({detail})" if detail else ""))
        assert ok, f"criterion {number} failed: {detail}"

    return emit


# 1 ---------------------------------------------------------------------------------------------


def test_criterion_01_gradient_check(verdict):
    t0 = time.perf_counter()
    worst = 0.0
    ok = True
    for form in ("standard", "paper_literal"):
        h = Hyperparameters(hidden_dim=5, rho=8, seed=0, cell_form=form)
        p = init_params(h)
        r = np.random.default_rng(1)
        x, y = r.uniform(-1, 1, (11, 8)), r.uniform(-1, 1, (4, 8))
        s0 = LstmState(r.uniform(-0.5, 0.5, 5), r.uniform(-0.5, 0.5, 5))
        grads, _, _ = bptt_gradients(p, x, y, rho=8, state=s0, cell_form=form)

        def loss_fn():
            return mse(forward_sequence(p, x, state=s0, cell_form=form)[0], y)

        for name in PARAM_NAMES:
            num = oracles.central_difference(loss_fn, p.arrays[name], 1e-5)
            err = np.abs(grads[name] - num)
            tol = np.maximum(1e-4 * np.abs(num), 1e-6)
            ok &= bool(np.all(err <= tol))
            worst = max(worst, float(np.max(err / tol)))
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 10
    verdict(1, "BPTT gradients vs central differences", ok, f"worst err/tol {worst:.3g}, {elapsed:.2f}s")


# 2 ---------------------------------------------------------------------------------------------


def _scalar(theta):
    h = Hyperparameters(input_dim=1, hidden_dim=1, output_dim=1)
    return h, NetworkParameters({n: np.full(s, theta) if n == "b_out" else np.zeros(s) for n, s in h.shapes().items()})


def test_criterion_02_adam_oracle(verdict):
    grad = lambda th: 2.0 * (th - 3.0)  # noqa: E731
    ref = oracles.adam_scalar(-1.0, grad, 100)
    h, p = _scalar(-1.0)
    a = AdamState.zeros_like(p)
    worst = 0.0
    for step in range(100):
        g = {n: np.zeros_like(v) for n, v in p.items()}
        g["b_out"][:] = grad(p["b_out"][0])
        p, a = adam_step(p, g, a, h)
        worst = max(worst, abs(p["b_out"][0] - ref[step]))
    h, p = _scalar(0.0)
    g = {n: np.zeros_like(v) for n, v in p.items()}
    g["b_out"][:] = 1.0
    p1, a1 = adam_step(p, g, AdamState.zeros_like(p), h)
    m_hat = a1.m["b_out"][0] / (1 - 0.9)
    v_hat = a1.v["b_out"][0] / (1 - 0.999)
    hand = p1["b_out"][0] == -0.01 / (1 + 1e-8) and math.isclose(m_hat, 1.0) and math.isclose(v_hat, 1.0)
    ok = worst <= 1e-12 and hand
    verdict(2, "Adam vs scalar reference and hand step", ok, f"max step deviation {worst:.2e}, theta1={float(p1['b_out'][0])!r}")


# 3 ---------------------------------------------------------------------------------------------


def _match(got, want, rel=1e-9):
    want = np.array(want, dtype=float)
    same_nan = np.array_equal(np.isnan(got), np.isnan(want))
    ok = ~np.isnan(want)
    return same_nan and np.allclose(got[ok], want[ok], rtol=rel, atol=1e-12)


def test_criterion_03_indicator_oracles(verdict):
    rng = np.random.default_rng(7)
    fixtures = {
        "constant": np.full(80, 42.5),
        "ramp": 100.0 + 0.75 * np.arange(80),
        "random_walk": 500.0 + np.cumsum(rng.normal(0, 3, 80)),
    }
    failures = []
    for name, x in fixtures.items():
        xs = list(x)
        line, sig, _ = ind.macd(x)
        ref_line, ref_sig = oracles.macd(xs, 12, 26, 9)
        checks = {
            "sma": _match(ind.sma(x, 10), oracles.sma(xs, 10)),
            "ema": _match(ind.ema(x, 10), oracles.ema(xs, 10)),
            "dema": _match(ind.dema(x, 10), oracles.dema(xs, 10)),
            "rsi": _match(ind.rsi(x, 14), oracles.rsi(xs, 14)),
            "roc": _match(ind.roc(x, 1), oracles.roc(xs, 1)),
            "macd": _match(line, ref_line) and _match(sig, ref_sig),
        }
        failures += [f"{name}/{k}" for k, v in checks.items() if not v]
    up = np.arange(1.0, 60.0)
    extremes = np.all(ind.rsi(up, 14)[14:] == 100.0) and np.all(ind.rsi(up[::-1], 14)[14:] == 0.0)
    ok = not failures and bool(extremes)
    verdict(3, "indicators vs brute-force oracles", ok, "mismatches: " + ",".join(failures) if failures else "18 checks, RSI 0/100 exact")


# 4 ---------------------------------------------------------------------------------------------


def test_criterion_04_pipeline_invertibility(verdict):
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(20):
        x = rng.normal(0, 10 ** rng.uniform(-2, 4), (11, 200)) + rng.uniform(-1e3, 1e3, (11, 1))
        y, stats = normalize_rows(FeatureMatrix(x))
        back = denormalize(y.values, stats)
        worst = max(worst, float(np.max(np.abs(back - x) / np.maximum(np.abs(x), 1e-300))))
        d = difference(FeatureMatrix(x))
        again = integrate(d.values, x[:, 0])
        worst = max(worst, float(np.max(np.abs(again - x) / np.maximum(np.abs(x), 1e-300))))
    endpoint = normalize_rows(FeatureMatrix([[0.0, 5.0, 10.0]], ("x",)))[0].values.tolist() == [[-1.0, 0.0, 1.0]]
    ok = worst <= 1e-9 and endpoint
    verdict(4, "normalize/difference round trips", ok, f"max relative error {worst:.2e}, endpoint map exact={endpoint}")


# 5 ---------------------------------------------------------------------------------------------

FORECAST_H = Hyperparameters(hidden_dim=16, rho=24, max_epochs=30, seed=0)


def test_criterion_05_forecasting_proxy(verdict):
    series = read_csv_file(bundled_candles_path(500))
    t0 = time.perf_counter()
    report = tskcv(stationary_features(series), FORECAST_H, CvConfig(k=1, retrain_mode="from_scratch"))
    elapsed = time.perf_counter() - t0
    ratio = report.rmse[3] / report.persistence_rmse[3]
    ok = ratio <= 1.25 and elapsed < 120
    verdict(
        5, "walk-forward close RMSE vs persistence", ok,
        f"model {report.rmse[3]:.3f} / persistence {report.persistence_rmse[3]:.3f} = {ratio:.3f} (limit 1.25), "
        f"{report.n_cycles} cycles, {elapsed:.1f}s",
    )  # fmt: skip


# 6 ---------------------------------------------------------------------------------------------


class _Oracle:
    def __init__(self, truth):
        self.truth = truth

    def fit(self, train):
        pass

    def predict(self, history):
        return self.truth[:4, history.shape[1]]


def test_criterion_06_tskcv_protocol(verdict):
    m = FeatureMatrix(np.random.default_rng(6).normal(size=(11, 130)))
    p = split_index(130, 0.8)
    q = 130 - p
    _, stats = normalize_rows(m.columns(0, p))
    truth = apply_normalization(m, stats).values
    counts_ok = True
    zero_ok = True
    for k in (1, 2, 5, q):
        rep = tskcv(m, Hyperparameters(rho=10), CvConfig(k=k), forecaster=_Oracle(truth))
        counts_ok &= rep.n_cycles == math.ceil(q / k)
        zero_ok &= bool(np.all(rep.rmse == 0.0))
    audit = []
    tskcv(m, Hyperparameters(hidden_dim=3, rho=10, max_epochs=1), CvConfig(k=3), audit=audit)
    future = [(purpose, c) for purpose, c in audit if purpose.startswith("predict:") and c >= int(purpose.split(":")[1])]
    ok = counts_ok and zero_ok and not future and len(audit) > 0
    verdict(6, "TSKCV cycles, oracle RMSE 0, no look-ahead", ok, f"q={q}, future reads={len(future)}")


# 7 ---------------------------------------------------------------------------------------------


def test_criterion_07_backtest_accounting(verdict, candles_1000, small_bundle):
    rules = ExecutionRules()
    start = min_start(small_bundle, "rsi", StrategyConfig(), IndicatorConfig())
    preds = predicted_closes(candles_1000, small_bundle, start)
    res = run_backtest(candles_1000, small_bundle, "rsi", rules, start=start, predictions=preds)
    closes = candles_1000.closes[start:]
    fee_at = {tr.timestamp: tr.fee_paid for tr in res.trades}
    fees = np.array([fee_at.get(int(ts), 0.0) for ts in res.curve.timestamps[1:]])
    residual = float(np.max(np.abs(np.diff(res.curve.values) - (res.base_qty[:-1] * np.diff(closes) - fees))))
    step_of = {int(ts): i for i, ts in enumerate(res.curve.timestamps)}
    cap_ok = gate_ok = True
    for tr in res.trades:
        i = step_of[tr.timestamp]
        pre = (res.quote_qty[i - 1] + res.base_qty[i - 1] * tr.price) if i else 10_000.0
        cap_ok &= tr.notional <= 0.25 * pre + 1e-9
        gate_ok &= abs((preds[i] - closes[i]) / closes[i]) > 0.001
    nonneg = bool(np.all(res.base_qty >= 0) and np.all(res.quote_qty >= 0))
    ok = residual <= 1e-9 and cap_ok and gate_ok and nonneg and len(res.trades) > 0
    verdict(7, "backtest accounting, cap, gate, non-negativity", ok,
            f"{len(res.trades)} trades, max residual {residual:.2e}")  # fmt: skip


# 8 ---------------------------------------------------------------------------------------------


def test_criterion_08_baselines(verdict, candles_1000, small_bundle):
    start = 500
    bh = run_backtest(candles_1000, small_bundle, "buyhold", ExecutionRules(), start=start)
    alpha = alpha_baseline(candles_1000, 10_000.0, ExecutionRules(), start=start)
    same = np.array_equal(bh.curve.values, alpha.values)
    free = run_backtest(candles_1000, small_bundle, "buyhold", ExecutionRules(fee_rate=0.0), start=start)
    c0, cT = candles_1000.closes[start], candles_1000.closes[-1]
    final = free.summary["final_value"]
    # the engine computes (initial / close_0) * close_T; both groupings are checked to the last ulp
    exact = final == 10_000.0 / c0 * cT and abs(final - 10_000.0 * cT / c0) <= 2 * np.spacing(final)
    ok = same and exact
    verdict(8, "buyhold == alpha, fee-free final value", ok, f"final {final!r} vs {float(10_000.0 * cT / c0)!r}")


# 9 ---------------------------------------------------------------------------------------------


def test_criterion_09_sharpe(verdict):
    rng = np.random.default_rng(9)
    returns = rng.normal(1e-4, 2e-3, 2 * 720 + 10)
    values = 10_000.0 * np.cumprod(np.r_[1.0, 1.0 + returns])
    curve = EquityCurve(np.arange(len(values)) * 3600, values, 3600)
    rf = 0.02 * 3600 / SECONDS_PER_YEAR
    worst = 0.0
    windows = sharpe_monthly(curve)
    for k, w in enumerate(windows):
        ref = oracles.sharpe_two_pass(values[k * 720 : (k + 1) * 720 + 1].tolist(), rf)
        worst = max(worst, abs(w.sharpe - ref) / abs(ref))
    flat = sharpe_monthly(EquityCurve(np.arange(721) * 3600, np.full(721, 1.0), 3600))[0].sharpe
    sym_vals = 10_000.0 * np.cumprod(np.r_[1.0, 1.0 + np.array([rf + 0.004, rf - 0.004] * 360)])
    sym = sharpe_monthly(EquityCurve(np.arange(721) * 3600, sym_vals, 3600))[0].sharpe
    ok = len(windows) == 2 and worst <= 1e-9 and flat is None and abs(sym) < 1e-9
    verdict(9, "Sharpe vs two-pass oracle, degenerate windows", ok, f"rel err {worst:.2e}, flat={flat}, symmetric={sym:.1e}")


# 10 --------------------------------------------------------------------------------------------


def _pipeline(out, cfg_path):
    csv_in = str(bundled_candles_path())
    common = ["--config", cfg_path, "--out-dir", str(out)]
    steps = [
        ["ingest", "--csv", csv_in],
        ["preprocess", "--in", f"{out}/candles.csv"],
        ["train", "--matrix", f"{out}/matrix.bin", "--stats", f"{out}/stats.json", "--save-optimizer"],
        ["cross-validate", "--candles", f"{out}/candles.csv", "--k", "8"],
        ["backtest", "--candles", f"{out}/candles.csv", "--model", f"{out}/model.json", "--strategy", "all"],
    ]
    return [main(s + common) for s in steps]


def test_criterion_10_determinism(verdict, tmp_path):
    cfg = tmp_path / "engine.json"
    cfg.write_text(json.dumps({"hyperparameters": {"hidden_dim": 8, "rho": 48, "max_epochs": 5}, "seed": 17}))
    a, b = tmp_path / "a", tmp_path / "b"
    codes = _pipeline(a, str(cfg)) + _pipeline(b, str(cfg))
    artifacts = sorted(p.name for p in a.iterdir() if not p.name.endswith(".meta.json"))
    differ = [n for n in artifacts if not filecmp.cmp(a / n, b / n, shallow=False)]
    ok = all(c == 0 for c in codes) and not differ and {"model.json", "cv.csv", "equity_random.csv"} <= set(artifacts)
    verdict(10, "two identical runs give byte-identical artifacts", ok,
            f"{len(artifacts)} artifacts compared, differing: {differ or 'none'}")  # fmt: skip


# 11 --------------------------------------------------------------------------------------------


def test_criterion_11_end_to_end(verdict, tmp_path):
    out = str(tmp_path)
    common = ["--out-dir", out]
    t0 = time.perf_counter()
    codes = [
        main(["ingest", "--csv", str(bundled_candles_path()), *common]),
        main(["preprocess", "--in", f"{out}/candles.csv", *common]),
        main(["train", "--matrix", f"{out}/matrix.bin", "--stats", f"{out}/stats.json", *common]),
        main(["backtest", "--candles", f"{out}/candles.csv", "--model", f"{out}/model.json", "--strategy", "all", *common]),
        main(["report", "--equity", f"{out}/equity_rsi.csv", "--alpha", f"{out}/alpha.csv", "--sharpe-out", "sharpe.csv", *common]),
    ]
    elapsed = time.perf_counter() - t0
    hyper = json.loads((tmp_path / "model.json").read_text())["hyperparameters"]
    defaults = (hyper["hidden_dim"], hyper["rho"], hyper["learning_rate"], hyper["init_range"]) == (36, 150, 0.01, 0.75)
    ok = all(c == 0 for c in codes) and defaults and elapsed < 60 and (tmp_path / "growth.csv").exists()
    verdict(11, "full CLI pipeline at default hyperparameters", ok, f"exit codes {codes}, {elapsed:.1f}s (limit 60s)")
