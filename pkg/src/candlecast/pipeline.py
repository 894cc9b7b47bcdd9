"""Candles -> stationary, row-normalized feature matrix, and back to prices."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import indicators as ind
from .indicators import IndicatorConfig
from .market_data import Candle, CandleSeries

FEATURE_NAMES = ("open", "high", "low", "close", "sma", "ema", "dema", "rsi", "roc", "macd", "macd_signal")
OHLC_ROWS = 4
STATS_SCHEMA_VERSION = 1
PIPELINE_STAGES = ("indicators", "difference", "normalize")


class PipelineError(ValueError):
    pass


@dataclass
class FeatureMatrix:
    values: np.ndarray  # (features, time)
    feature_names: tuple = FEATURE_NAMES
    t0: int = 0
    interval: int = 3600

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[0] != len(self.feature_names):
            raise PipelineError(
                f"matrix has shape {self.values.shape}, expected ({len(self.feature_names)}, n)"
            )

    @property
    def n_columns(self) -> int:
        return self.values.shape[1]

    @property
    def timestamps(self) -> np.ndarray:
        return self.t0 + self.interval * np.arange(self.n_columns, dtype=np.int64)

    def columns(self, start: int, stop: Optional[int] = None) -> "FeatureMatrix":
        stop = self.n_columns if stop is None else stop
        return FeatureMatrix(self.values[:, start:stop], self.feature_names, self.t0 + start * self.interval, self.interval)


@dataclass
class NormalizationStats:
    min: np.ndarray
    max: np.ndarray
    feature_names: tuple = FEATURE_NAMES

    def __post_init__(self):
        self.min = np.asarray(self.min, dtype=float)
        self.max = np.asarray(self.max, dtype=float)
        if self.min.shape != self.max.shape or self.min.shape != (len(self.feature_names),):
            raise PipelineError("normalization stats: min/max/feature_names lengths differ")
        if np.any(self.max < self.min):
            raise PipelineError("normalization stats: max < min")

    @property
    def span(self) -> np.ndarray:
        return self.max - self.min

    def to_dict(self) -> dict:
        return {
            "schema_version": STATS_SCHEMA_VERSION,
            "feature_names": list(self.feature_names),
            # json renders floats with shortest round-trip repr: bit exact
            "min": [float(v) for v in self.min],
            "max": [float(v) for v in self.max],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationStats":
        for key in ("schema_version", "feature_names", "min", "max"):
            if key not in d:
                raise PipelineError(f"normalization stats: missing field '{key}'")
        if d["schema_version"] != STATS_SCHEMA_VERSION:
            raise PipelineError(f"normalization stats: unsupported schema_version {d['schema_version']}")
        return cls(np.array(d["min"], dtype=float), np.array(d["max"], dtype=float), tuple(d["feature_names"]))


@dataclass
class PipelineArtifacts:
    """Everything needed to feed the network and map its outputs back to prices."""

    normalized: FeatureMatrix
    stats: NormalizationStats
    train_columns: int
    last_raw_candle: Candle
    config: IndicatorConfig = field(default_factory=IndicatorConfig)
    cutoff: Optional[int] = None
    stages: tuple = PIPELINE_STAGES


def build_features(series: CandleSeries, cfg: Optional[IndicatorConfig] = None) -> FeatureMatrix:
    """Stack OHLC and the seven indicator rows; drop leading columns with undefined values."""
    cfg = cfg or IndicatorConfig()
    n = len(series)
    if n <= cfg.warmup:
        raise PipelineError(f"series of {n} candles is too short for indicator warm-up of {cfg.warmup}")
    ohlc = series.ohlc()
    close = ohlc[3]
    line, signal, _ = ind.macd(close, cfg.macd_fast, cfg.macd_slow, cfg.macd_signal)
    rows = np.vstack(
        [
            ohlc,
            ind.sma(close, cfg.sma_period),
            ind.ema(close, cfg.ema_period),
            ind.dema(close, cfg.dema_period),
            ind.rsi(close, cfg.rsi_period),
            ind.roc(close, cfg.roc_period),
            line,
            signal,
        ]
    )
    defined = ~np.isnan(rows).any(axis=0)
    first = int(np.argmax(defined))
    if not defined[first] or not defined[first:].all():
        raise PipelineError("indicator rows contain undefined values after warm-up")
    ts0 = int(series.timestamps[first])
    return FeatureMatrix(rows[:, first:], FEATURE_NAMES, ts0, series.interval)


def difference(m: FeatureMatrix) -> FeatureMatrix:
    """Column-wise first differences; column ``t`` holds ``m[t+1] - m[t]``."""
    if m.n_columns < 2:
        raise PipelineError("difference needs at least 2 columns")
    return FeatureMatrix(np.diff(m.values, axis=1), m.feature_names, m.t0 + m.interval, m.interval)


def integrate(diff: np.ndarray, first_column: np.ndarray) -> np.ndarray:
    """Inverse of :func:`difference` given the original first column."""
    diff = np.asarray(diff, dtype=float)
    first = np.asarray(first_column, dtype=float).reshape(-1, 1)
    return np.hstack([first, first + np.cumsum(diff, axis=1)])


def _scale(values: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    span = (hi - lo)[:, None]
    safe = np.where(span > 0, span, 1.0)
    y = 2.0 * (values - lo[:, None]) / safe - 1.0
    return np.where(span > 0, y, 0.0)


def normalize_rows(m: FeatureMatrix):
    """Map each row affinely onto [-1, 1] using its own min/max. Constant rows become 0."""
    if m.n_columns < 1:
        raise PipelineError("normalize_rows needs at least 1 column")
    stats = NormalizationStats(m.values.min(axis=1), m.values.max(axis=1), m.feature_names)
    return FeatureMatrix(_scale(m.values, stats.min, stats.max), m.feature_names, m.t0, m.interval), stats


def apply_normalization(m: FeatureMatrix, stats: NormalizationStats) -> FeatureMatrix:
    """Scale with frozen stats; values outside the stored range are not clipped."""
    if m.values.shape[0] != len(stats.min):
        raise PipelineError(f"stats have {len(stats.min)} rows, matrix has {m.values.shape[0]}")
    return FeatureMatrix(_scale(m.values, stats.min, stats.max), m.feature_names, m.t0, m.interval)


def denormalize(y, stats: NormalizationStats, rows: Optional[Sequence[int]] = None) -> np.ndarray:
    """Invert the scaling for the given rows (all rows by default). ``y`` is (rows,) or (rows, n)."""
    idx = np.arange(len(stats.min)) if rows is None else np.asarray(rows)
    lo, span = stats.min[idx], stats.span[idx]
    y = np.asarray(y, dtype=float)
    if y.ndim == 2:
        lo, span = lo[:, None], span[:, None]
    # constant rows normalise to 0 and recover the constant
    return np.where(span > 0, (y + 1.0) * 0.5 * span + lo, lo + 0.0 * y)


def reconstruct_prediction(y_norm, stats: NormalizationStats, last_candle: Candle, interval: int = 3600) -> Candle:
    """Predicted next candle = last candle + denormalized OHLC diffs.

    The result is not forced to satisfy low <= open/close <= high; the network
    predicts each channel independently.
    """
    diff = denormalize(np.asarray(y_norm, dtype=float)[:OHLC_ROWS], stats, range(OHLC_ROWS))
    o, h, l, c = last_candle.ohlc + diff
    return Candle(last_candle.timestamp + interval, float(o), float(h), float(l), float(c))


def split_index(n: int, ratio: float) -> int:
    if not 0.0 < ratio < 1.0:
        raise PipelineError(f"split ratio must be in (0, 1), got {ratio}")
    p = int(math.floor(ratio * n + 1e-9))
    if p < 1 or p >= n:
        raise PipelineError(f"split of {n} columns at {ratio} leaves an empty side")
    return p


def split(m: FeatureMatrix, ratio: float):
    """Contiguous (train, validation) split preserving time order."""
    p = split_index(m.n_columns, ratio)
    return m.columns(0, p), m.columns(p)


def stationary_features(series: CandleSeries, cfg: Optional[IndicatorConfig] = None) -> FeatureMatrix:
    return difference(build_features(series, cfg))


def prepare(
    series: CandleSeries,
    cfg: Optional[IndicatorConfig] = None,
    split_ratio: float = 0.8,
    cutoff: Optional[int] = None,
) -> PipelineArtifacts:
    """Run indicators -> difference -> normalize with stats frozen on the training prefix."""
    cfg = cfg or IndicatorConfig()
    diffed = stationary_features(series, cfg)
    p = split_index(diffed.n_columns, split_ratio)
    _, stats = normalize_rows(diffed.columns(0, p))
    return PipelineArtifacts(
        normalized=apply_normalization(diffed, stats),
        stats=stats,
        train_columns=p,
        last_raw_candle=series[-1],
        config=cfg,
        cutoff=cutoff,
    )


def save_stats(path, stats: NormalizationStats, extra: Optional[dict] = None) -> None:
    doc = stats.to_dict()
    if extra:
        doc.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_stats(path) -> tuple[NormalizationStats, dict]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return NormalizationStats.from_dict(doc), doc


def save_matrix(path, m: FeatureMatrix) -> None:
    """Binary matrix file: numpy ``.npy`` layout, float64, (features, time)."""
    with open(path, "wb") as fh:
        np.save(fh, m.values, allow_pickle=False)


def load_matrix(path, feature_names=FEATURE_NAMES, t0: int = 0, interval: int = 3600) -> FeatureMatrix:
    with open(path, "rb") as fh:
        values = np.load(fh, allow_pickle=False)
    return FeatureMatrix(values, tuple(feature_names), t0, interval)


__all__ = [
    "FEATURE_NAMES",
    "FeatureMatrix",
    "NormalizationStats",
    "PipelineArtifacts",
    "PipelineError",
    "apply_normalization",
    "build_features",
    "denormalize",
    "difference",
    "integrate",
    "normalize_rows",
    "prepare",
    "reconstruct_prediction",
    "split",
    "stationary_features",
]
