"""
Training the FastLSTM forecaster
================================

A linear layer feeds a FastLSTM cell whose hidden state is mapped to four
outputs: the next open, high, low and close diffs in normalized space.
"""
import os
import tempfile

import numpy as np

from candlecast import bundled_candles_path
from candlecast.market_data import read_csv_file
from candlecast.pipeline import prepare, reconstruct_prediction
from candlecast.rnn import Hyperparameters, load_checkpoint, save_checkpoint, train

series = read_csv_file(bundled_candles_path())
art = prepare(series)
train_cols = art.normalized.values[:, : art.train_columns]

# defaults: 36 hidden units, windows of 150 steps, Adam at 0.01, init on +-0.75
h = Hyperparameters(max_epochs=40, seed=0)
params, log = train(train_cols, h)
print("epochs run:", log.epochs_run, "stopped early:", log.stopped_early)
for e in (0, 9, 19, log.epochs_run - 1):
    print(f"  epoch {e + 1:>3}: loss {log.epoch_losses[e]:.5f}")

# checkpoints are plain JSON and reload bit for bit
path = os.path.join(tempfile.mkdtemp(), "model.json")
save_checkpoint(params, art.stats, h, path, adam=log.adam_state)
bundle = load_checkpoint(path)
assert bundle.params.equals(params)

# one-step forecast for the candle after the last one
window = art.normalized.values[:, -h.rho :]
y = bundle.predict_next(window)
nxt = reconstruct_prediction(y, art.stats, series[-1], series.interval)
print("last close %.2f -> predicted next close %.2f" % (series[-1].close, nxt.close))
print("predicted candle:", np.round([nxt.open, nxt.high, nxt.low, nxt.close], 2))
