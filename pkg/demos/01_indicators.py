"""
Technical indicators on a candle series
=======================================

Every indicator returns an array as long as its input, with NaN over the
warm-up span where the look-back window is not yet full.
"""
import numpy as np

from candlecast import bundled_candles_path
from candlecast import indicators as ind
from candlecast.market_data import read_csv_file

series = read_csv_file(bundled_candles_path())
closes = series.closes
print(f"{len(series)} hourly candles, closes {closes.min():.1f} .. {closes.max():.1f}")

# moving averages: SMA is a plain mean, EMA is seeded with it, DEMA cancels most of the lag
sma = ind.sma(closes, 10)
ema = ind.ema(closes, 10)
dema = ind.dema(closes, 10)
print("last close %.2f  sma %.2f  ema %.2f  dema %.2f" % (closes[-1], sma[-1], ema[-1], dema[-1]))

# momentum: Wilder RSI in [0, 100] and one-step rate of change in percent
rsi = ind.rsi(closes, 14)
roc = ind.roc(closes, 1)
print("rsi %.1f  roc %.3f%%" % (rsi[-1], roc[-1]))

line, signal, hist = ind.macd(closes)
print("macd %.3f  signal %.3f  histogram %.3f" % (line[-1], signal[-1], hist[-1]))

# the longest warm-up decides how many leading columns the feature matrix drops
for name, arr in [("sma", sma), ("ema", ema), ("dema", dema), ("rsi", rsi), ("roc", roc), ("macd signal", signal)]:
    print(f"{name:>12}: first defined index {int(np.argmax(~np.isnan(arr)))}")
print("combined warm-up:", ind.IndicatorConfig().warmup)
