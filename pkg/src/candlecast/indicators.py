"""Technical indicators on close-price series.

Every function returns a float array the same length as its input with
``nan`` in warm-up positions. Indicators are causal: the value at ``t`` only
depends on inputs at positions ``<= t``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter


class IndicatorError(ValueError):
    pass


@dataclass
class IndicatorConfig:
    sma_period: int = 10
    ema_period: int = 10
    dema_period: int = 10
    rsi_period: int = 14
    roc_period: int = 1
    macd_fast: int = 12
    macd_slow: int = 26
    macd_signal: int = 9

    def __post_init__(self):
        periods = (
            self.sma_period,
            self.ema_period,
            self.dema_period,
            self.rsi_period,
            self.roc_period,
            self.macd_fast,
            self.macd_slow,
            self.macd_signal,
        )
        if any(int(p) != p or p < 1 for p in periods):
            raise IndicatorError("indicator periods must be integers >= 1")
        if self.macd_fast >= self.macd_slow:
            raise IndicatorError("macd_fast must be smaller than macd_slow")

    @property
    def warmup(self) -> int:
        """Number of leading positions where at least one feature is undefined."""
        return max(
            self.sma_period - 1,
            self.ema_period - 1,
            2 * self.dema_period - 2,
            self.rsi_period,
            self.roc_period,
            self.macd_slow + self.macd_signal - 2,
        )


def _as_series(values, n: int, need: int, name: str) -> np.ndarray:
    x = np.asarray(values, dtype=float)
    if x.ndim != 1:
        raise IndicatorError(f"{name}: expected a 1-d series")
    if n < 1 or int(n) != n:
        raise IndicatorError(f"{name}: period must be an integer >= 1")
    if len(x) < need:
        raise IndicatorError(f"{name}({n}) needs at least {need} values, got {len(x)}")
    return x


def _smooth(x: np.ndarray, start: int, n: int, alpha: float) -> np.ndarray:
    """Exponential smoothing seeded with mean(x[start:start+n]) at index start+n-1."""
    out = np.full(len(x), np.nan)
    seed_at = start + n - 1
    seed = x[start : start + n].mean()
    out[seed_at] = seed
    tail = x[seed_at + 1 :]
    if len(tail):
        decay = 1.0 - alpha
        out[seed_at + 1 :], _ = lfilter([alpha], [1.0, -decay], tail, zi=[decay * seed])
    return out


def _first_defined(x: np.ndarray) -> int:
    idx = np.flatnonzero(~np.isnan(x))
    if not len(idx):
        raise IndicatorError("series has no defined values")
    return int(idx[0])


def sma(closes, n: int) -> np.ndarray:
    x = _as_series(closes, n, n, "sma")
    out = np.full(len(x), np.nan)
    # windowed mean rather than cumsum differences: no drift on long series
    out[n - 1 :] = np.lib.stride_tricks.sliding_window_view(x, n).mean(axis=1)
    return out


def ema(closes, n: int) -> np.ndarray:
    """EMA with alpha = 2/(n+1), seeded by the SMA of the first ``n`` defined values.

    Leading ``nan`` values are skipped, so ``ema`` can be applied to the output of
    another indicator.
    """
    x = np.asarray(closes, dtype=float)
    start = _first_defined(x) if len(x) else 0
    _as_series(x[start:], n, n, "ema")
    return _smooth(x, start, n, 2.0 / (n + 1))


def dema(closes, n: int) -> np.ndarray:
    x = _as_series(closes, n, 2 * n - 1, "dema")
    e1 = ema(x, n)
    e2 = ema(e1, n)
    return 2.0 * e1 - e2


def rsi(closes, n: int = 14) -> np.ndarray:
    """Wilder RSI. Flat windows (no gains, no losses) read 50."""
    x = _as_series(closes, n, n + 1, "rsi")
    change = np.diff(x, prepend=np.nan)
    gain = np.where(change > 0, change, 0.0)
    loss = np.where(change < 0, -change, 0.0)
    gain[0] = loss[0] = np.nan
    avg_gain = _smooth(gain, 1, n, 1.0 / n)
    avg_loss = _smooth(loss, 1, n, 1.0 / n)
    out = np.full(len(x), np.nan)
    g, l = avg_gain[n:], avg_loss[n:]
    with np.errstate(divide="ignore", invalid="ignore"):
        val = 100.0 - 100.0 / (1.0 + g / l)
    val = np.where(l == 0, np.where(g == 0, 50.0, 100.0), val)
    val = np.where((g == 0) & (l > 0), 0.0, val)
    out[n:] = val
    return out


def roc(closes, n: int = 1) -> np.ndarray:
    """Percentage rate of change over ``n`` periods."""
    x = _as_series(closes, n, n + 1, "roc")
    out = np.full(len(x), np.nan)
    out[n:] = 100.0 * (x[n:] - x[:-n]) / x[:-n]
    return out


def macd(closes, fast: int = 12, slow: int = 26, signal: int = 9):
    """Return ``(macd_line, signal_line, histogram)``."""
    if fast < 1 or slow < 1 or signal < 1:
        raise IndicatorError("macd periods must be >= 1")
    x = _as_series(closes, slow, slow + signal, "macd")
    line = ema(x, fast) - ema(x, slow)
    sig = ema(line, signal)
    return line, sig, line - sig
