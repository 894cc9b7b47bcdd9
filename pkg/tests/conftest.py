import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from candlecast import bundled_candles_path  # noqa: E402
from candlecast.market_data import read_csv_file  # noqa: E402
from candlecast.pipeline import prepare  # noqa: E402
from candlecast.rnn import Hyperparameters, ModelBundle, train  # noqa: E402
from candlecast.synthetic import synthetic_candles  # noqa: E402


@pytest.fixture(scope="session")
def candles_1000():
    return read_csv_file(bundled_candles_path())


@pytest.fixture(scope="session")
def candles_500():
    return synthetic_candles(500, seed=0)


@pytest.fixture(scope="session")
def small_bundle(candles_1000):
    """A quickly trained model on the bundled fixture (hidden 8, rho 24)."""
    art = prepare(candles_1000)
    h = Hyperparameters(hidden_dim=8, rho=24, max_epochs=15, seed=1)
    params, _ = train(art.normalized.values[:, : art.train_columns], h)
    return ModelBundle(params, art.stats, h, extra={"indicators": {}})


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
