"""
Backtesting the trading strategies
==================================

Each hour the model predicts the next close, a strategy turns history plus
that prediction into Buy, Sell or Hold, and the order fills at the current
close. Trades are capped at 25% of portfolio value, pay a 0.1% fee, and are
skipped when the expected move does not beat the fee.
"""
from candlecast import bundled_candles_path
from candlecast.backtest import ExecutionRules, alpha_baseline, min_start, predicted_closes, run_backtest, sharpe_monthly
from candlecast.indicators import IndicatorConfig
from candlecast.market_data import read_csv_file
from candlecast.pipeline import prepare
from candlecast.rnn import Hyperparameters, ModelBundle, train
from candlecast.strategies import STRATEGY_NAMES, StrategyConfig

series = read_csv_file(bundled_candles_path())
art = prepare(series)
h = Hyperparameters(max_epochs=40, seed=0)
params, _ = train(art.normalized.values[:, : art.train_columns], h)
bundle = ModelBundle(params, art.stats, h)

# trade over the part of the series the model never saw
rules = ExecutionRules()
start = max(min_start(bundle, s, StrategyConfig(), IndicatorConfig()) for s in STRATEGY_NAMES)
start = max(start, int(0.8 * len(series)))
preds = predicted_closes(series, bundle, start)

alpha = alpha_baseline(series, 10_000.0, rules, start)
print(f"{len(series) - start} trading hours, buy-and-hold ends at {alpha.values[-1]:.2f} USDT")
for name in STRATEGY_NAMES:
    res = run_backtest(series, bundle, name, rules, start=start, predictions=preds, seed=0)
    s = res.summary
    print(f"{name:>8}: final {s['final_value']:9.2f}  trades {s['n_trades']:>3}  fees {s['total_fees']:6.2f}")

# Sharpe per 30-day block of hourly returns; this span is shorter than one block
# on the bundled data, so run it on the whole series instead
full = alpha_baseline(series, 10_000.0, rules)
for w in sharpe_monthly(full):
    print("window from %d: sharpe %s" % (w.start_timestamp, "undefined" if w.sharpe is None else f"{w.sharpe:.4f}"))
