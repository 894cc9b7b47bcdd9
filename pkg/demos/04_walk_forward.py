"""
Walk-forward validation and a one-parameter sweep
=================================================

Each cycle trains on everything before the current block, predicts the next k
columns one step ahead, then grows the training set by k. Errors are in price
units and compared with the zero-change (persistence) forecast.
"""
from candlecast import bundled_candles_path
from candlecast.market_data import read_csv_file
from candlecast.pipeline import stationary_features
from candlecast.rnn import Hyperparameters
from candlecast.validation import CHANNELS, CvConfig, sweep, tskcv

series = read_csv_file(bundled_candles_path(500))
m = stationary_features(series)

# a small warm-started model keeps this quick; use retrain_mode="from_scratch" for the full protocol
h = Hyperparameters(hidden_dim=16, rho=24, max_epochs=60, seed=0)
cv = CvConfig(k=4, retrain_mode="warm_start", cycle_epochs=3)
report = tskcv(m, h, cv)
print(f"p={report.p} training columns, q={report.q} validation columns, {report.n_cycles} cycles")
for ch, model, naive in zip(CHANNELS, report.rmse, report.persistence_rmse):
    print(f"  {ch:>5}: rmse {model:7.3f}   persistence {naive:7.3f}")

# only the swept value changes between grid points; the seed stays fixed
res = sweep(m, Hyperparameters(hidden_dim=8, max_epochs=20, seed=0), "rho", [12, 24, 48], CvConfig(k=16))
for value, row in zip(res.grid, res.rmse):
    print(f"rho={value:<3} close rmse {row[3]:.3f}")
