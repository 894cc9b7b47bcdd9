"""Buy/Sell/Hold decisions from close history plus the predicted next close."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional

import numpy as np

from . import indicators as ind

STRATEGY_NAMES = ("roc", "rsi", "dema", "macd", "random", "buyhold")


class StrategyError(ValueError):
    pass


class Signal(str, Enum):
    BUY = "Buy"
    SELL = "Sell"
    HOLD = "Hold"


@dataclass
class StrategyConfig:
    roc_upper: float = 0.005
    roc_lower: float = -0.005
    rsi_period: int = 14
    overbought: float = 70.0
    oversold: float = 30.0
    dema_short: int = 10
    dema_long: int = 21
    macd_fast: int = 12
    macd_slow: int = 26
    macd_signal: int = 9
    random_seed: Optional[int] = None
    inject_prediction: bool = True

    def __post_init__(self):
        if not self.roc_lower < self.roc_upper:
            raise StrategyError("roc_lower must be below roc_upper")
        if not self.oversold < self.overbought:
            raise StrategyError("oversold must be below overbought")


def _closes(values, need: int, what: str) -> np.ndarray:
    x = np.asarray(values, dtype=float)
    if len(x) < need:
        raise StrategyError(f"{what} needs at least {need} closes, got {len(x)}")
    return x


def _cross(a_prev, a_now, b_prev, b_now) -> Signal:
    if a_prev <= b_prev and a_now > b_now:
        return Signal.BUY
    if a_prev >= b_prev and a_now < b_now:
        return Signal.SELL
    return Signal.HOLD


def roc_signal(last_close: float, predicted_close: float, cfg: StrategyConfig) -> Signal:
    if last_close <= 0:
        raise StrategyError("last_close must be positive")
    r = (predicted_close - last_close) / last_close
    if r > cfg.roc_upper:
        return Signal.BUY
    if r < cfg.roc_lower:
        return Signal.SELL
    return Signal.HOLD


def rsi_signal(closes, cfg: StrategyConfig) -> Signal:
    """Contrarian RSI: overbought sells, oversold buys."""
    x = _closes(closes, cfg.rsi_period + 1, "rsi strategy")
    value = ind.rsi(x, cfg.rsi_period)[-1]
    if value >= cfg.overbought:
        return Signal.SELL
    if value <= cfg.oversold:
        return Signal.BUY
    return Signal.HOLD


def dema_signal(closes, cfg: StrategyConfig) -> Signal:
    """Short/long DEMA crossover at the final step."""
    x = _closes(closes, 2 * cfg.dema_long - 1, "dema strategy")
    short = ind.dema(x, cfg.dema_short)
    long = ind.dema(x, cfg.dema_long)
    if np.isnan(long[-2]):
        return Signal.HOLD
    return _cross(short[-2], short[-1], long[-2], long[-1])


def macd_signal(closes, cfg: StrategyConfig) -> Signal:
    """MACD line crossing its signal line at the final step."""
    x = _closes(closes, cfg.macd_slow + cfg.macd_signal, "macd strategy")
    line, sig, _ = ind.macd(x, cfg.macd_fast, cfg.macd_slow, cfg.macd_signal)
    return _cross(line[-2], line[-1], sig[-2], sig[-1])


_RANDOM_CHOICES = (Signal.BUY, Signal.SELL, Signal.HOLD)


def random_signal(rng: np.random.Generator) -> Signal:
    return _RANDOM_CHOICES[int(rng.integers(3))]


def buy_and_hold_signal(step_index: int) -> Signal:
    return Signal.BUY if step_index == 0 else Signal.HOLD


def warmup_closes(name: str, cfg: StrategyConfig) -> int:
    """Closes of realized history a strategy needs (prediction not counted)."""
    need = {
        "roc": 1,
        "rsi": cfg.rsi_period + 1,
        "dema": 2 * cfg.dema_long - 1,
        "macd": cfg.macd_slow + cfg.macd_signal,
        "random": 0,
        "buyhold": 0,
    }[name]
    return max(need - (1 if cfg.inject_prediction else 0), 1)


def make_strategy(name: str, cfg: Optional[StrategyConfig] = None, seed: int = 0) -> Callable:
    """Return ``decide(step, closes_so_far, predicted_close) -> Signal``.

    ``closes_so_far`` ends with the current (last realized) close. The random
    strategy owns its generator, so build a fresh decider per run.
    """
    cfg = cfg or StrategyConfig()
    if name not in STRATEGY_NAMES:
        raise StrategyError(f"unknown strategy '{name}'; choose from {STRATEGY_NAMES}")

    def extended(closes, predicted):
        if cfg.inject_prediction:
            return np.append(closes, predicted)
        return np.asarray(closes, dtype=float)

    if name == "roc":
        return lambda step, closes, pred: roc_signal(closes[-1], pred, cfg)
    if name == "rsi":
        return lambda step, closes, pred: rsi_signal(extended(closes, pred), cfg)
    if name == "dema":
        return lambda step, closes, pred: dema_signal(extended(closes, pred), cfg)
    if name == "macd":
        return lambda step, closes, pred: macd_signal(extended(closes, pred), cfg)
    if name == "random":
        rng = np.random.default_rng(seed if cfg.random_seed is None else cfg.random_seed)
        return lambda step, closes, pred: random_signal(rng)
    return lambda step, closes, pred: buy_and_hold_signal(step)
