"""Deterministic synthetic candle fixtures (sine + trend + noise)."""
from __future__ import annotations

import numpy as np

from .market_data import CandleSeries, parse_timestamp, series_from_arrays

FIXTURE_START = "2019-01-31T00:00:00Z"


def synthetic_candles(
    n: int = 500,
    *,
    seed: int = 0,
    start=FIXTURE_START,
    interval: int = 3600,
    base: float = 1000.0,
    trend: float = 0.5,
    amplitude: float = 50.0,
    period: float = 48.0,
    noise: float = 5.0,
    wick: float = 2.0,
    volume: bool = False,
) -> CandleSeries:
    """Closes follow ``base + trend*t + amplitude*sin(2*pi*t/period) + N(0, noise)``.

    Each open is the previous close; highs/lows extend the body by a half-normal wick.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(n + 1, dtype=float)
    path = base + trend * t + amplitude * np.sin(2 * np.pi * t / period) + rng.normal(0.0, noise, n + 1)
    close = path[1:]
    open_ = path[:-1]
    body_hi = np.maximum(open_, close)
    body_lo = np.minimum(open_, close)
    high = body_hi + np.abs(rng.normal(0.0, wick, n))
    low = body_lo - np.abs(rng.normal(0.0, wick, n))
    if np.any(low <= 0):
        raise ValueError("synthetic parameters produce non-positive prices")
    t0 = parse_timestamp(start)
    t0 -= t0 % interval
    ts = t0 + interval * np.arange(n, dtype=np.int64)
    vol = rng.uniform(1.0, 10.0, n) if volume else None
    return series_from_arrays(ts, np.vstack([open_, high, low, close]), interval, vol)


def sine_candles(n: int = 400, *, period: float = 24.0, amplitude: float = 50.0, base: float = 1000.0, seed=None):
    """Noise-free sine closes (optionally jittered when ``seed`` is given)."""
    noise = 0.0 if seed is None else 0.5
    return synthetic_candles(
        n, seed=seed or 0, trend=0.0, amplitude=amplitude, period=period, base=base, noise=noise, wick=0.5
    )
