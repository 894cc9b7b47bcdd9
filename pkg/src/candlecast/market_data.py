"""Hourly OHLC candle series: CSV I/O, validation/repair, paginated fetching."""
from __future__ import annotations

import io
import logging
import math
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_INTERVAL = 3600
DEFAULT_CUTOFF = "2013-05-15T00:00:00Z"
CSV_COLUMNS = ("timestamp", "open", "high", "low", "close")


class MarketDataError(ValueError):
    """Raised for malformed, empty or otherwise unusable market data."""


def parse_timestamp(value) -> int:
    """Accept Unix seconds (int/float/str of digits) or an ISO-8601 string; return Unix seconds UTC."""
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, float):
        return int(value)
    text = str(value).strip()
    try:
        return int(text)
    except ValueError:
        pass
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def format_timestamp(ts: int) -> str:
    return datetime.fromtimestamp(ts, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def fmt_float(x: float) -> str:
    # 17 significant digits round-trips every IEEE double.
    return format(float(x), ".17g")


@dataclass(frozen=True)
class Candle:
    timestamp: int
    open: float
    high: float
    low: float
    close: float
    volume: Optional[float] = None

    def check(self) -> None:
        prices = (self.open, self.high, self.low, self.close)
        if not all(math.isfinite(p) and p > 0 for p in prices):
            raise MarketDataError(f"non-positive or non-finite price in candle at {self.timestamp}")
        if self.low > min(self.open, self.close) or self.high < max(self.open, self.close):
            raise MarketDataError(
                f"candle at {self.timestamp} violates low <= min(open, close) <= max(open, close) <= high"
            )

    @property
    def ohlc(self) -> np.ndarray:
        return np.array([self.open, self.high, self.low, self.close])


@dataclass
class CandleSeries:
    candles: list[Candle] = field(default_factory=list)
    interval: int = DEFAULT_INTERVAL

    def __len__(self) -> int:
        return len(self.candles)

    def __getitem__(self, idx):
        if isinstance(idx, slice):
            return CandleSeries(self.candles[idx], self.interval)
        return self.candles[idx]

    def __iter__(self):
        return iter(self.candles)

    @property
    def timestamps(self) -> np.ndarray:
        return np.array([c.timestamp for c in self.candles], dtype=np.int64)

    @property
    def closes(self) -> np.ndarray:
        return np.array([c.close for c in self.candles], dtype=float)

    def ohlc(self) -> np.ndarray:
        """(4, n) array of open/high/low/close."""
        return np.array([[c.open, c.high, c.low, c.close] for c in self.candles], dtype=float).T.reshape(4, -1)

    @property
    def has_volume(self) -> bool:
        return any(c.volume is not None for c in self.candles)


# --------------------------------------------------------------------------- CSV


def parse_csv(text) -> CandleSeries:
    """Parse ``timestamp,open,high,low,close[,volume]`` rows.

    Accepts a string or a text stream. Lines starting with ``#`` are ignored.
    Row order is preserved as-is; use :func:`validate_series` to check it.
    """
    if not isinstance(text, str):
        text = text.read()
    lines = [(i + 1, ln) for i, ln in enumerate(text.splitlines())]
    lines = [(n, ln) for n, ln in lines if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise MarketDataError("empty candle file")
    header_no, header = lines[0]
    cols = [c.strip().lower() for c in header.split(",")]
    if tuple(cols[:5]) != CSV_COLUMNS or len(cols) > 6 or (len(cols) == 6 and cols[5] != "volume"):
        raise MarketDataError(f"line {header_no}: expected header 'timestamp,open,high,low,close[,volume]'")
    with_volume = len(cols) == 6
    candles = []
    for n, ln in lines[1:]:
        parts = [p.strip() for p in ln.split(",")]
        if len(parts) != len(cols):
            raise MarketDataError(f"line {n}: expected {len(cols)} fields, got {len(parts)}")
        try:
            ts = int(parts[0])
            o, h, l, c = (float(p) for p in parts[1:5])
            vol = float(parts[5]) if with_volume and parts[5] != "" else None
        except ValueError as exc:
            raise MarketDataError(f"line {n}: {exc}") from None
        candle = Candle(ts, o, h, l, c, vol)
        try:
            candle.check()
        except MarketDataError as exc:
            raise MarketDataError(f"line {n}: {exc}") from None
        candles.append(candle)
    if not candles:
        raise MarketDataError("candle file has a header but no rows")
    return CandleSeries(candles)


def write_csv(series: CandleSeries, fh=None, header_comment: Optional[str] = None) -> Optional[str]:
    """Render a series as CSV (LF line endings). Returns the text if ``fh`` is None."""
    out = io.StringIO() if fh is None else fh
    if header_comment:
        out.write(f"# {header_comment}\n")
    with_volume = series.has_volume
    out.write(",".join(CSV_COLUMNS + (("volume",) if with_volume else ())) + "\n")
    for c in series:
        row = [str(c.timestamp), fmt_float(c.open), fmt_float(c.high), fmt_float(c.low), fmt_float(c.close)]
        if with_volume:
            row.append("" if c.volume is None else fmt_float(c.volume))
        out.write(",".join(row) + "\n")
    if fh is None:
        return out.getvalue()
    return None


def read_csv_file(path) -> CandleSeries:
    with open(path, encoding="utf-8") as fh:
        return parse_csv(fh)


def write_csv_file(series: CandleSeries, path, header_comment: Optional[str] = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        write_csv(series, fh, header_comment)


# --------------------------------------------------------------------------- validation


@dataclass
class ValidationReport:
    duplicates: list[int] = field(default_factory=list)
    gaps: list[int] = field(default_factory=list)
    non_monotonic: list[int] = field(default_factory=list)
    misaligned: list[int] = field(default_factory=list)
    repaired: CandleSeries = field(default_factory=CandleSeries)

    @property
    def ok(self) -> bool:
        return not (self.duplicates or self.gaps or self.non_monotonic or self.misaligned)


def validate_series(series: CandleSeries) -> ValidationReport:
    """Report duplicates, gaps and ordering problems and build a repaired series.

    Repair keeps the first occurrence of each timestamp, sorts, and fills every
    missing interval with a flat candle at the previous close.
    """
    interval = series.interval
    report = ValidationReport()
    seen: dict[int, Candle] = {}
    prev_ts = None
    for c in series:
        if c.timestamp % interval:
            report.misaligned.append(c.timestamp)
        if c.timestamp in seen:
            report.duplicates.append(c.timestamp)
            continue
        if prev_ts is not None and c.timestamp < prev_ts:
            report.non_monotonic.append(c.timestamp)
        seen[c.timestamp] = c
        prev_ts = c.timestamp if prev_ts is None else max(prev_ts, c.timestamp)

    ordered = [seen[t] for t in sorted(seen)]
    repaired: list[Candle] = []
    for c in ordered:
        if repaired:
            last = repaired[-1]
            t = last.timestamp + interval
            while t < c.timestamp:
                report.gaps.append(t)
                p = last.close
                repaired.append(Candle(t, p, p, p, p, 0.0 if last.volume is not None else None))
                t += interval
        repaired.append(c)
    report.repaired = CandleSeries(repaired, interval)
    return report


def truncate_before(series: CandleSeries, cutoff=DEFAULT_CUTOFF) -> CandleSeries:
    """Drop candles earlier than ``cutoff`` (Unix seconds or ISO-8601)."""
    cut = parse_timestamp(cutoff)
    kept = [c for c in series if c.timestamp >= cut]
    if not kept:
        raise MarketDataError(f"no candles at or after cutoff {format_timestamp(cut)}: insufficient data")
    return CandleSeries(kept, series.interval)


# --------------------------------------------------------------------------- fetching


@dataclass
class HistoryEndpoint:
    """Histohour-style paginated endpoint description.

    ``records_path`` walks the JSON response down to the list of records; ``fields``
    maps candle attributes to record keys.
    """

    url: str = "https://min-api.cryptocompare.com/data/v2/histohour"
    base_param: str = "fsym"
    quote_param: str = "tsym"
    limit_param: str = "limit"
    end_param: str = "toTs"
    max_limit: int = 2000
    records_path: tuple = ("Data", "Data")
    fields: dict = field(
        default_factory=lambda: {
            "timestamp": "time",
            "open": "open",
            "high": "high",
            "low": "low",
            "close": "close",
            "volume": "volumefrom",
        }
    )


class FetchError(MarketDataError):
    pass


def _requests_get(url, params, timeout=30.0):
    import requests

    resp = requests.get(url, params=params, timeout=timeout)
    resp.raise_for_status()
    return resp.json()


def _extract_records(payload, endpoint: HistoryEndpoint) -> list[Candle]:
    node = payload
    for key in endpoint.records_path:
        if not isinstance(node, dict) or key not in node:
            raise FetchError(f"response schema mismatch: missing '{key}'")
        node = node[key]
    if not isinstance(node, list):
        raise FetchError("response schema mismatch: records are not a list")
    f = endpoint.fields
    out = []
    for rec in node:
        try:
            vol_key = f.get("volume")
            vol = rec.get(vol_key) if vol_key else None
            out.append(
                Candle(
                    int(rec[f["timestamp"]]),
                    float(rec[f["open"]]),
                    float(rec[f["high"]]),
                    float(rec[f["low"]]),
                    float(rec[f["close"]]),
                    None if vol is None else float(vol),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FetchError(f"response schema mismatch: {exc!r}") from None
    return out


def fetch_history(
    endpoint: HistoryEndpoint,
    pair: str,
    interval: int,
    span: tuple,
    *,
    page_size: Optional[int] = None,
    get: Callable = _requests_get,
    attempts: int = 3,
    backoff: float = 1.0,
    sleep: Callable[[float], None] = time.sleep,
) -> CandleSeries:
    """Fetch candles for ``span = (start, end)`` (end exclusive), newest page first.

    Pages hold at most ``min(page_size, endpoint.max_limit)`` candles and walk
    backwards through ``end_param``. Transport failures are retried with
    exponential backoff; results are deduplicated (first occurrence wins) and
    returned in ascending order.
    """
    start, end = (parse_timestamp(s) for s in span)
    start -= start % interval
    end -= end % interval
    if end <= start:
        raise FetchError("empty fetch span")
    base, quote = pair.split("/")
    limit = min(page_size or endpoint.max_limit, endpoint.max_limit)
    remaining = (end - start) // interval
    last_ts = end - interval  # newest candle wanted
    merged: dict[int, Candle] = {}
    while remaining > 0:
        n = min(limit, remaining)
        params = {
            endpoint.base_param: base,
            endpoint.quote_param: quote,
            endpoint.limit_param: n,
            endpoint.end_param: last_ts,
        }
        payload = None
        for attempt in range(attempts):
            try:
                payload = get(endpoint.url, params)
                break
            except FetchError:
                raise
            except Exception as exc:  # transport-level failure
                log.warning("fetch attempt %d/%d failed: %s", attempt + 1, attempts, exc)
                if attempt + 1 == attempts:
                    raise FetchError(f"endpoint unreachable after {attempts} attempts: {exc}") from exc
                sleep(backoff * 2**attempt)
        page = _extract_records(payload, endpoint)
        first_page_ts = last_ts - (n - 1) * interval
        for c in page:
            if first_page_ts <= c.timestamp <= last_ts and c.timestamp not in merged:
                merged[c.timestamp] = c
        remaining -= n
        last_ts = first_page_ts - interval
    candles = [merged[t] for t in sorted(merged)]
    for c in candles:
        c.check()
    return CandleSeries(candles, interval)


def series_from_arrays(
    timestamps: Sequence[int],
    ohlc: np.ndarray,
    interval: int = DEFAULT_INTERVAL,
    volume: Optional[Iterable[float]] = None,
) -> CandleSeries:
    o, h, l, c = (np.asarray(r, dtype=float) for r in ohlc)
    vols = list(volume) if volume is not None else [None] * len(timestamps)
    return CandleSeries(
        [
            Candle(int(t), float(a), float(b), float(d), float(e), None if v is None else float(v))
            for t, a, b, d, e, v in zip(timestamps, o, h, l, c, vols)
        ],
        interval,
    )
