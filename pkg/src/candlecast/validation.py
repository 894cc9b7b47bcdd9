"""Walk-forward time-series k-fold cross validation and one-at-a-time sweeps."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Protocol, Sequence

import numpy as np

from .pipeline import OHLC_ROWS, FeatureMatrix, apply_normalization, normalize_rows, split_index
from .rnn import AdamState, Hyperparameters, NetworkParameters, predict_next, train

CHANNELS = ("open", "high", "low", "close")
SWEEPABLE = {"init_range": float, "learning_rate": float, "rho": int, "hidden_dim": int}
RETRAIN_MODES = ("from_scratch", "warm_start")


class ValidationError(ValueError):
    pass


@dataclass
class CvConfig:
    k: int = 1
    split_ratio: float = 0.8
    retrain_mode: str = "from_scratch"
    cycle_epochs: Optional[int] = None  # warm_start only; default max_epochs // 10

    def __post_init__(self):
        if self.k < 1:
            raise ValidationError("k must be >= 1")
        if self.retrain_mode not in RETRAIN_MODES:
            raise ValidationError(f"retrain_mode must be one of {RETRAIN_MODES}")


class Forecaster(Protocol):
    def fit(self, train: np.ndarray) -> None: ...

    def predict(self, history: np.ndarray) -> np.ndarray: ...


class LstmForecaster:
    """Adapter running :func:`train` / :func:`predict_next` under a retrain mode."""

    def __init__(self, h: Hyperparameters, cv: Optional[CvConfig] = None):
        self.h = h
        self.cv = cv or CvConfig()
        self.params: Optional[NetworkParameters] = None
        self.adam: Optional[AdamState] = None

    def fit(self, train_cols: np.ndarray) -> None:
        if self.cv.retrain_mode == "warm_start" and self.params is not None:
            epochs = self.cv.cycle_epochs
            if epochs is None:
                epochs = max(1, self.h.max_epochs // 10)
            self.params, log = train(train_cols, self.h, params=self.params, adam=self.adam, max_epochs=epochs)
        else:
            self.params, log = train(train_cols, self.h)
        self.adam = log.adam_state

    def predict(self, history: np.ndarray) -> np.ndarray:
        return predict_next(self.params, history[:, -self.h.rho :], cell_form=self.h.cell_form)


@dataclass
class CycleResult:
    cycle: int
    columns: list  # predicted column indices
    abs_errors: np.ndarray  # (n, 4), price units

    @property
    def rmse(self) -> np.ndarray:
        return np.sqrt(np.mean(self.abs_errors**2, axis=0))


@dataclass
class CvReport:
    k: int
    p: int
    q: int
    cycles: list = field(default_factory=list)
    rmse: np.ndarray = field(default_factory=lambda: np.zeros(OHLC_ROWS))
    persistence_rmse: np.ndarray = field(default_factory=lambda: np.zeros(OHLC_ROWS))

    @property
    def n_cycles(self) -> int:
        return len(self.cycles)

    @property
    def abs_errors(self) -> np.ndarray:
        return np.vstack([c.abs_errors for c in self.cycles])


class _AuditedColumns:
    """Column-prefix access to a matrix that records the furthest column handed out."""

    def __init__(self, values: np.ndarray, log: Optional[list]):
        self._values = values
        self._log = log
        self.max_read = -1

    def before(self, t: int, purpose: str) -> np.ndarray:
        self.max_read = max(self.max_read, t - 1)
        if self._log is not None:
            self._log.append((purpose, t - 1))
        return self._values[:, :t]


def rmse(errors) -> float:
    e = np.asarray(errors, dtype=float).ravel()
    if e.size == 0:
        raise ValidationError("rmse of an empty series")
    return float(np.sqrt(np.sum(e * e) / e.size))


def tskcv(
    m: FeatureMatrix,
    h: Hyperparameters,
    cv: Optional[CvConfig] = None,
    *,
    forecaster: Optional[Forecaster] = None,
    audit: Optional[list] = None,
) -> CvReport:
    """Walk-forward validation on a stationary (differenced, unnormalized) matrix.

    The first ``p`` columns train, the remaining ``q`` validate. Each cycle fits on
    every column before the current block, predicts the next ``k`` columns one step
    ahead (each from the ``rho`` columns preceding it), then grows the training set
    by ``k``. Normalization stats come from the initial ``p`` columns and stay
    frozen. Errors are reported in price units.

    ``audit``, if given, receives ``(purpose, last_column_read)`` tuples, with
    purpose ``"fit"`` or ``"predict:<target column>"``.
    """
    cv = cv or CvConfig()
    n = m.n_columns
    p = split_index(n, cv.split_ratio)
    q = n - p
    if cv.k > q:
        raise ValidationError(f"k = {cv.k} exceeds the validation size q = {q}")
    if p < h.rho + 1:
        raise ValidationError(f"training part has {p} columns, needs at least rho + 1 = {h.rho + 1}")
    _, stats = normalize_rows(m.columns(0, p))
    values = apply_normalization(m, stats).values
    half_span = 0.5 * stats.span[:OHLC_ROWS]
    data = _AuditedColumns(values, audit)
    model = forecaster if forecaster is not None else LstmForecaster(h, cv)

    report = CvReport(cv.k, p, q)
    end = p
    cycle = 0
    while end < n:
        model.fit(data.before(end, "fit"))
        cols = list(range(end, min(end + cv.k, n)))
        errs = []
        for t in cols:
            history = data.before(t, f"predict:{t}")
            pred = np.asarray(model.predict(history), dtype=float)[:OHLC_ROWS]
            # denormalized diff error == price error, the last price being known
            errs.append(np.abs(pred - values[:OHLC_ROWS, t]) * half_span)
        report.cycles.append(CycleResult(cycle, cols, np.array(errs)))
        end += cv.k
        cycle += 1
    all_err = report.abs_errors
    report.rmse = np.sqrt(np.mean(all_err**2, axis=0))
    actual_diffs = m.values[:OHLC_ROWS, p:]
    report.persistence_rmse = np.sqrt(np.mean(actual_diffs**2, axis=1))
    return report


@dataclass
class SweepReport:
    param: str
    grid: list
    rmse: np.ndarray  # (len(grid), 4)
    reports: list = field(default_factory=list)


def sweep(
    m: FeatureMatrix,
    base: Hyperparameters,
    param: str,
    grid: Sequence,
    cv: Optional[CvConfig] = None,
    *,
    forecaster_factory: Optional[Callable[[Hyperparameters], Forecaster]] = None,
) -> SweepReport:
    """Run :func:`tskcv` once per grid value, changing only ``param``.

    Every grid point reuses the base seed, so the value is the only thing that varies.
    """
    if param not in SWEEPABLE:
        raise ValidationError(f"unknown sweep parameter '{param}'; choose from {sorted(SWEEPABLE)}")
    if not len(grid):
        raise ValidationError("sweep grid is empty")
    cast = SWEEPABLE[param]
    cv = cv or CvConfig()
    reports = []
    for value in grid:
        h = replace(base, **{param: cast(value)})
        fc = forecaster_factory(h) if forecaster_factory else None
        reports.append(tskcv(m, h, cv, forecaster=fc))
    return SweepReport(param, [cast(v) for v in grid], np.vstack([r.rmse for r in reports]), reports)


# --------------------------------------------------------------------------- CSV reports


def write_cv_csv(report: CvReport, fh, header_comment: Optional[str] = None) -> None:
    if header_comment:
        fh.write(f"# {header_comment}\n")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["k", "cycle", "first_column", "n", *CHANNELS])
    for c in report.cycles:
        w.writerow([report.k, c.cycle, c.columns[0], len(c.columns), *(format(v, ".17g") for v in c.rmse)])


def read_cv_csv(fh) -> dict:
    """Aggregate a cv CSV back into ``{"k", "n", "rmse"}`` (pooled over cycles)."""
    rows = list(csv.DictReader(ln for ln in fh if not ln.startswith("#")))
    required = ["k", "cycle", "first_column", "n", *CHANNELS]
    if not rows:
        raise ValidationError("cv report has no rows")
    for col in required:
        if col not in rows[0]:
            raise ValidationError(f"cv report: missing column '{col}'")
    n = np.array([int(r["n"]) for r in rows], dtype=float)
    sq = np.array([[float(r[ch]) ** 2 for ch in CHANNELS] for r in rows])
    pooled = np.sqrt((sq * n[:, None]).sum(axis=0) / n.sum())
    return {"k": int(rows[0]["k"]), "cycles": len(rows), "rmse": pooled}


def write_sweep_csv(report: SweepReport, fh, header_comment: Optional[str] = None) -> None:
    if header_comment:
        fh.write(f"# {header_comment}\n")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["param", "value", *CHANNELS])
    for value, row in zip(report.grid, report.rmse):
        w.writerow([report.param, value, *(format(v, ".17g") for v in row)])


def expected_cycles(q: int, k: int) -> int:
    return math.ceil(q / k)
