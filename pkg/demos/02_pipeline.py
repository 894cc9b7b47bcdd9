"""
From candles to a stationary, normalized training matrix
========================================================

Indicators are appended as extra rows, every row is differenced, and each row
is scaled to [-1, 1] with min/max taken from the training prefix only.
"""
import numpy as np

from candlecast import bundled_candles_path
from candlecast.market_data import read_csv_file
from candlecast.pipeline import build_features, denormalize, difference, prepare, reconstruct_prediction

series = read_csv_file(bundled_candles_path())

raw = build_features(series)
print("feature rows:", ", ".join(raw.feature_names))
print("columns after warm-up:", raw.n_columns)

art = prepare(series, split_ratio=0.8)
m = art.normalized.values
print("normalized matrix", m.shape, "with", art.train_columns, "training columns")
print("training region range: [%.3f, %.3f]" % (m[:, : art.train_columns].min(), m[:, : art.train_columns].max()))
# later columns are scaled with the same frozen stats, so they may leave [-1, 1]
print("validation region range: [%.3f, %.3f]" % (m[:, art.train_columns :].min(), m[:, art.train_columns :].max()))

# every step inverts: denormalize, then add the diff to the last known candle
diffs = difference(raw).values
back = denormalize(m, art.stats)
print("max denormalization error:", np.abs(back - diffs).max())

origin, actual = series[-2], series[-1]
rebuilt = reconstruct_prediction(m[:, -1], art.stats, origin, series.interval)
print("rebuilt last candle close %.6f, actual %.6f" % (rebuilt.close, actual.close))
