"""Hourly candle forecasting with a FastLSTM network and rule-based trading backtests."""
from importlib.resources import files

from .backtest import ExecutionRules, Portfolio, alpha_baseline, run_backtest, sharpe_monthly
from .indicators import IndicatorConfig
from .market_data import Candle, CandleSeries, parse_csv, validate_series, write_csv
from .pipeline import FeatureMatrix, NormalizationStats, build_features, prepare
from .rnn import Hyperparameters, init_params, predict_next, train
from .strategies import Signal, StrategyConfig
from .validation import CvConfig, sweep, tskcv

__version__ = "0.1.0"


def bundled_candles_path(n: int = 1000):
    """Path of a bundled synthetic fixture CSV (``n`` is 1000 or 500 candles)."""
    if n not in (500, 1000):
        raise ValueError("bundled fixtures have 500 or 1000 candles")
    return files(__package__) / "data" / f"candles_{n}.csv"
