"""Quote ingestion, panel alignment, normalization and index targets."""

from __future__ import annotations

import csv
import datetime as dt
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

FEATURES = ("open", "close", "low", "high", "volume")
QUOTE_COLUMNS = ("date", "symbol", "open", "close", "low", "high", "volume")


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class RawQuoteRecord:
    date: dt.date
    symbol: str
    open: float
    close: float
    low: float
    high: float
    volume: float


@dataclass(frozen=True)
class AlignedPanel:
    """values[s, f, t] for symbol s, feature f, date t."""

    symbols: tuple[str, ...]
    dates: tuple[dt.date, ...]
    features: tuple[str, ...]
    values: np.ndarray
    dropped: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        shape = (len(self.symbols), len(self.features), len(self.dates))
        if self.values.shape != shape:
            raise DataError(f"panel values have shape {self.values.shape}, expected {shape}")
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise DataError("panel dates must be strictly increasing")

    @property
    def n_days(self) -> int:
        return len(self.dates)

    def series(self, symbol: str, feature: str) -> np.ndarray:
        return self.values[self.symbols.index(symbol), self.features.index(feature)]

    def index_of(self, symbol: str) -> int:
        try:
            return self.symbols.index(symbol)
        except ValueError:
            raise DataError(f"unknown ticker {symbol!r}") from None

    def pairs(self) -> list[tuple[str, str]]:
        """All unordered pairs in canonical (panel-order, i < j) sequence."""
        s = self.symbols
        return [(s[a], s[b]) for a in range(len(s)) for b in range(a + 1, len(s))]

    def slice_days(self, mask: np.ndarray) -> "AlignedPanel":
        mask = np.asarray(mask, dtype=bool)
        dates = tuple(d for d, keep in zip(self.dates, mask) if keep)
        return replace(self, dates=dates, values=self.values[:, :, mask])


@dataclass(frozen=True)
class ObservationMatrix:
    pair: tuple[str, str]
    rows: np.ndarray


@dataclass(frozen=True)
class TargetSeries:
    values: np.ndarray
    source_symbol: str = ""


def _parse_date(text: str) -> dt.date:
    return dt.date.fromisoformat(text.strip()[:10])


def load_quotes(path) -> list[RawQuoteRecord]:
    """Read a ``date,symbol,open,close,low,high,volume`` CSV (any column order)."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"quote file not found: {path}")
    records = []
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = [c.strip().lower() for c in (reader.fieldnames or [])]
        missing = [c for c in QUOTE_COLUMNS if c not in header]
        if missing:
            raise DataError(f"{path}: missing required column(s) {', '.join(missing)}")
        reader.fieldnames = header
        for row_no, row in enumerate(reader, start=1):
            try:
                date = _parse_date(row["date"])
                nums = {k: float(row[k]) for k in ("open", "close", "low", "high", "volume")}
            except (TypeError, ValueError) as exc:
                raise DataError(f"{path}: row {row_no}: cannot parse ({exc})") from None
            if not all(np.isfinite(v) for v in nums.values()):
                raise DataError(f"{path}: row {row_no}: non-finite value")
            if nums["volume"] < 0:
                raise DataError(f"{path}: row {row_no}: negative volume {nums['volume']}")
            if nums["low"] > min(nums["open"], nums["close"]) or nums["high"] < max(nums["open"], nums["close"]):
                raise DataError(f"{path}: row {row_no}: low/high do not bracket open/close")
            records.append(RawQuoteRecord(date, row["symbol"].strip(), **nums))
    return records


def write_quotes(records: Iterable[RawQuoteRecord], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(QUOTE_COLUMNS)
        for r in records:
            w.writerow([r.date.isoformat(), r.symbol, repr(r.open), repr(r.close),
                        repr(r.low), repr(r.high), repr(r.volume)])


def build_panel(
    records: Sequence[RawQuoteRecord],
    symbols: Sequence[str],
    start: dt.date | None = None,
    end: dt.date | None = None,
) -> AlignedPanel:
    """Align the requested symbols on the days every one of them traded.

    Symbols without a single record in [start, end] are dropped and listed
    in ``panel.dropped``.
    """
    if not symbols:
        raise DataError("no symbols requested")
    if start is not None and end is not None and start > end:
        raise DataError(f"start {start} is after end {end}")
    wanted = list(dict.fromkeys(symbols))
    by_symbol: dict[str, dict[dt.date, RawQuoteRecord]] = {s: {} for s in wanted}
    for r in records:
        if r.symbol not in by_symbol:
            continue
        if (start is not None and r.date < start) or (end is not None and r.date > end):
            continue
        by_symbol[r.symbol][r.date] = r

    kept = [s for s in wanted if by_symbol[s]]
    dropped = tuple(s for s in wanted if not by_symbol[s])
    if dropped:
        logger.warning("dropping symbols with no records in range: %s", ", ".join(dropped))
    if not kept:
        raise DataError("every requested symbol was dropped")
    common = set.intersection(*(set(by_symbol[s]) for s in kept))
    dates = tuple(sorted(common))
    if len(dates) < 2:
        raise DataError(f"aligned date axis has {len(dates)} day(s); need at least 2")
    values = np.empty((len(kept), len(FEATURES), len(dates)))
    for a, s in enumerate(kept):
        rows = by_symbol[s]
        for t, d in enumerate(dates):
            r = rows[d]
            values[a, :, t] = (r.open, r.close, r.low, r.high, r.volume)
    return AlignedPanel(tuple(kept), dates, FEATURES, values, dropped)


def minmax_normalize(panel: AlignedPanel) -> AlignedPanel:
    """Rescale each (symbol, feature) row to [0, 1]; constant rows become 0."""
    v = panel.values
    lo = v.min(axis=2, keepdims=True)
    span = v.max(axis=2, keepdims=True) - lo
    safe = np.where(span > 0, span, 1.0)
    out = np.where(span > 0, (v - lo) / safe, 0.0)
    return replace(panel, values=out)


def observation_matrix(
    panel: AlignedPanel, i: str, j: str, features: Sequence[str] = ("close", "volume")
) -> ObservationMatrix:
    """Stack the chosen feature rows of ``i`` above those of ``j``.

    Features are taken in panel order regardless of how they are listed.
    """
    if i == j:
        raise DataError("observation matrix needs two different tickers")
    if not features:
        raise DataError("empty feature subset")
    unknown = [f for f in features if f not in panel.features]
    if unknown:
        raise DataError(f"unknown feature(s) {unknown}")
    rows = [panel.features.index(f) for f in panel.features if f in set(features)]
    a, b = panel.index_of(i), panel.index_of(j)
    block = np.concatenate([panel.values[a, rows], panel.values[b, rows]])
    return ObservationMatrix((i, j), block)


def observation_stack(panel: AlignedPanel, features: Sequence[str]) -> tuple[list[tuple[str, str]], np.ndarray]:
    """All canonical pairs and their observation matrices as one (P, 2M, N) array."""
    if not features:
        raise DataError("empty feature subset")
    unknown = [f for f in features if f not in panel.features]
    if unknown:
        raise DataError(f"unknown feature(s) {unknown}")
    rows = [panel.features.index(f) for f in panel.features if f in set(features)]
    sub = panel.values[:, rows]
    n = len(panel.symbols)
    ia, ib = np.triu_indices(n, k=1)
    return panel.pairs(), np.concatenate([sub[ia], sub[ib]], axis=1)


def rise_fall_targets(index_close: Sequence[float], source_symbol: str = "") -> TargetSeries:
    """1 where the index closed above the previous close, else 0 (flat is 0)."""
    x = np.asarray(index_close, dtype=np.float64)
    if x.ndim != 1 or x.size < 2:
        raise DataError("need at least two index closes")
    return TargetSeries((x[1:] > x[:-1]).astype(np.int64), source_symbol)


def split_years(panel: AlignedPanel) -> dict[int, AlignedPanel]:
    years = np.array([d.year for d in panel.dates])
    return {int(y): panel.slice_days(years == y) for y in np.unique(years)}
