"""Price ingestion, peak/off-peak aggregation and descriptive statistics.

Hourly day-ahead prices are collapsed to one (off-peak, peak) pair per
calendar day. Peak is the mean of the 12 delivery hours starting 8:00 through
19:00; off-peak is the mean of the other 12 hours of the same day.
"""

from __future__ import annotations

import calendar
import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

logger = logging.getLogger(__name__)

PEAK_HOURS = np.arange(8, 20)
OFFPEAK_HOURS = np.setdiff1d(np.arange(24), PEAK_HOURS)
SERIES_NAMES = ("off-peak", "peak")


def iso_weekday(dates: np.ndarray) -> np.ndarray:
    """Day of week for datetime64[D] values, 1 = Monday ... 7 = Sunday."""
    days = np.asarray(dates, dtype="datetime64[D]").astype(np.int64)
    # 1970-01-01 was a Thursday
    return (days + 3) % 7 + 1


@dataclass(frozen=True)
class HourlySeries:
    dates: np.ndarray
    hours: np.ndarray
    prices: np.ndarray

    def __post_init__(self):
        dates = np.asarray(self.dates, dtype="datetime64[D]")
        hours = np.asarray(self.hours, dtype=np.int64)
        prices = np.asarray(self.prices, dtype=float)
        if not (dates.shape == hours.shape == prices.shape) or dates.ndim != 1:
            raise DataError("dates, hours and prices must be 1-d arrays of equal length")
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "hours", hours)
        object.__setattr__(self, "prices", prices)


@dataclass(frozen=True)
class DailyBivariateSeries:
    """One (off-peak, peak) pair per contiguous calendar day."""

    dates: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        dates = np.asarray(self.dates, dtype="datetime64[D]")
        values = np.asarray(self.values, dtype=float)
        if dates.ndim != 1 or values.shape != (dates.size, 2):
            raise DataError(f"values must have shape ({dates.size}, 2), got {values.shape}")
        if dates.size > 1:
            steps = np.diff(dates).astype(np.int64)
            if np.any(steps <= 0):
                raise DataError("dates must be strictly increasing")
            gaps = np.flatnonzero(steps != 1)
            if gaps.size:
                raise DataError(f"missing days after {dates[gaps[0]]}")
        if not np.all(np.isfinite(values)):
            bad = dates[~np.all(np.isfinite(values), axis=1)][0]
            raise DataError(f"non-finite price on {bad}")
        dates.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.dates.size

    @property
    def dow(self) -> np.ndarray:
        return iso_weekday(self.dates)

    @property
    def offpeak(self) -> np.ndarray:
        return self.values[:, 0]

    @property
    def peak(self) -> np.ndarray:
        return self.values[:, 1]

    def slice(self, start: int, stop: int) -> "DailyBivariateSeries":
        return DailyBivariateSeries(self.dates[start:stop], self.values[start:stop])


@dataclass(frozen=True)
class MomentTable:
    """Table-style summary; arrays are indexed (off-peak, peak).

    ``sd`` uses the n-1 convention of descriptive tables, while the
    standardized moments (cor, skew, coskew) use the divide-by-n sd so that
    m_{2,0} = m_{0,2} = 1 exactly.
    """

    n: int
    mean: np.ndarray
    sd: np.ndarray
    median: np.ndarray
    min: np.ndarray
    max: np.ndarray
    cor: float
    skew: np.ndarray
    coskew: np.ndarray

    COLUMNS = ("mean", "sd", "median", "min", "max", "cor", "skew", "coskew")

    def rows(self) -> list[tuple[str, list[float]]]:
        out = []
        for i, name in enumerate(SERIES_NAMES):
            out.append((name, [
                float(self.mean[i]), float(self.sd[i]), float(self.median[i]),
                float(self.min[i]), float(self.max[i]), float(self.cor),
                float(self.skew[i]), float(self.coskew[i]),
            ]))
        return out

    def format(self, digits: int = 2) -> str:
        head = f"{'':<10}" + "".join(f"{c:>10}" for c in self.COLUMNS)
        lines = [head]
        for name, vals in self.rows():
            lines.append(f"{name:<10}" + "".join(f"{v:>10.{digits}f}" for v in vals))
        lines.append(f"days: {self.n}")
        return "\n".join(lines)


def aggregate_daily(hourly: HourlySeries) -> DailyBivariateSeries:
    """Collapse complete 24-hour days into (off-peak, peak) means."""
    dates, inverse = np.unique(hourly.dates, return_inverse=True)
    counts = np.bincount(inverse, minlength=dates.size)
    short = np.flatnonzero(counts != 24)
    if short.size:
        d = dates[short[0]]
        raise DataError(f"day {d} has {counts[short[0]]} hourly prices, expected 24")
    grid = np.full((dates.size, 24), np.nan)
    if np.any((hourly.hours < 0) | (hourly.hours > 23)):
        raise DataError("hour labels must lie in 0..23")
    grid[inverse, hourly.hours] = hourly.prices
    missing = np.flatnonzero(np.isnan(grid).any(axis=1))
    if missing.size:
        raise DataError(f"day {dates[missing[0]]} has duplicate or missing hours")
    values = np.column_stack([
        grid[:, OFFPEAK_HOURS].mean(axis=1),
        grid[:, PEAK_HOURS].mean(axis=1),
    ])
    return DailyBivariateSeries(dates, values)


def base_from_peak_offpeak(pair) -> float:
    offpeak, peak = pair
    return (offpeak + peak) / 2.0


def _standardized(series: DailyBivariateSeries) -> np.ndarray:
    if len(series) < 2:
        raise DataError("need at least 2 days for moments")
    v = series.values
    sd = v.std(axis=0)
    scale = np.maximum(np.abs(v).max(axis=0), 1.0)
    if np.any(sd <= 1e-14 * scale):
        raise DataError("zero-variance series, standardized moments undefined")
    return (v - v.mean(axis=0)) / sd


def standardized_moment(series: DailyBivariateSeries, i: int, j: int) -> float:
    """Sample m_{i,j}: mean of z1**i * z2**j with population-sd standardization."""
    if i < 0 or j < 0:
        raise ValueError("moment orders must be non-negative")
    z = _standardized(series)
    return float(np.mean(z[:, 0] ** i * z[:, 1] ** j))


def descriptive_stats(series: DailyBivariateSeries) -> MomentTable:
    z = _standardized(series)
    v = series.values

    def m(i, j):
        return float(np.mean(z[:, 0] ** i * z[:, 1] ** j))

    return MomentTable(
        n=len(series),
        mean=v.mean(axis=0),
        sd=v.std(axis=0, ddof=1),
        median=np.median(v, axis=0),
        min=v.min(axis=0),
        max=v.max(axis=0),
        cor=m(1, 1),
        skew=np.array([m(3, 0), m(0, 3)]),
        coskew=np.array([m(2, 1), m(1, 2)]),
    )


# ---------------------------------------------------------------------------
# ingestion

def _last_sunday(year: int, month: int) -> np.datetime64:
    last = calendar.monthrange(year, month)[1]
    weekday = calendar.weekday(year, month, last)  # Monday = 0
    return np.datetime64(f"{year:04d}-{month:02d}-{last - (weekday + 1) % 7:02d}")


def is_dst_switch(day: np.datetime64) -> int:
    """-1 on the spring-forward day (23 h), +1 on the fall-back day (25 h), else 0."""
    year = int(str(day)[:4])
    if day == _last_sunday(year, 3):
        return -1
    if day == _last_sunday(year, 10):
        return 1
    return 0


@dataclass
class IngestReport:
    fmt: str
    normalized_days: list = field(default_factory=list)


def normalize_dst(hourly: HourlySeries) -> tuple[HourlySeries, list]:
    """Repair 23/25-hour clock-change days so every day has 24 prices.

    A missing hour is filled with the preceding hour's price (the following
    hour's for hour 0); a duplicated hour is replaced by the mean of its two
    records. Only days on the European clock-change Sundays are touched.
    """
    dates, inverse = np.unique(hourly.dates, return_inverse=True)
    counts = np.bincount(inverse, minlength=dates.size)
    fixed = []
    keep = np.ones(hourly.dates.size, dtype=bool)
    extra_d, extra_h, extra_p = [], [], []
    for k in np.flatnonzero((counts == 23) | (counts == 25)):
        day = dates[k]
        switch = is_dst_switch(day)
        rows = np.flatnonzero(inverse == k)
        hours = hourly.hours[rows]
        prices = hourly.prices[rows]
        if counts[k] == 23 and switch == -1:
            absent = np.setdiff1d(np.arange(24), hours)
            if absent.size != 1:
                continue
            h = int(absent[0])
            src = h - 1 if h > 0 else h + 1
            extra_d.append(day)
            extra_h.append(h)
            extra_p.append(float(prices[hours == src][0]))
        elif counts[k] == 25 and switch == 1:
            uniq, cnt = np.unique(hours, return_counts=True)
            if uniq.size != 24:
                continue
            h = int(uniq[cnt == 2][0])
            dup = rows[hours == h]
            keep[dup] = False
            extra_d.append(day)
            extra_h.append(h)
            extra_p.append(float(hourly.prices[dup].mean()))
        else:
            continue
        fixed.append(day)
        logger.info("normalized clock-change day %s (%d records)", day, counts[k])
    if not fixed:
        return hourly, []
    out = HourlySeries(
        np.concatenate([hourly.dates[keep], np.array(extra_d, dtype="datetime64[D]")]),
        np.concatenate([hourly.hours[keep], np.array(extra_h, dtype=np.int64)]),
        np.concatenate([hourly.prices[keep], np.array(extra_p, dtype=float)]),
    )
    order = np.lexsort((out.hours, out.dates))
    return HourlySeries(out.dates[order], out.hours[order], out.prices[order]), fixed


def _parse_rows(path: Path) -> tuple[list[str] | None, list[list[str]]]:
    with open(path, newline="") as fh:
        sample = fh.read(4096)
        fh.seek(0)
        try:
            dialect = csv.Sniffer().sniff(sample, delimiters=",;\t ")
        except csv.Error:
            dialect = csv.excel
        rows = [[c.strip() for c in r] for r in csv.reader(fh, dialect) if r and any(c.strip() for c in r)]
    rows = [r for r in rows if not r[0].startswith("#")]
    if not rows:
        raise DataError(f"{path}: no records")
    header = None
    try:
        np.datetime64(rows[0][0], "D")
    except ValueError:
        header, rows = [c.lower() for c in rows[0]], rows[1:]
    return header, rows


def read_prices(path, normalize_clock_change: bool = True) -> tuple[DailyBivariateSeries, IngestReport]:
    """Read hourly (date, hour, price) or daily (date, off-peak, peak) records.

    Both layouts have three columns, so the layout is decided by the data:
    an hourly file repeats each date with integer hour labels, a daily file
    has one row per date. Anything else is rejected as ambiguous.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    header, rows = _parse_rows(path)
    widths = {len(r) for r in rows}
    if widths != {3}:
        raise DataError(f"{path}: expected 3 columns per record, found {sorted(widths)}")
    try:
        dates = np.array([r[0] for r in rows], dtype="datetime64[D]")
        second = np.array([float(r[1]) for r in rows])
        third = np.array([float(r[2]) for r in rows])
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None

    unique_dates = np.unique(dates).size == dates.size
    hour_like = np.all(second == np.round(second)) and np.all((second >= 0) & (second <= 23))
    if header is not None and "hour" in header[1]:
        fmt = "hourly"
    elif header is not None and ("peak" in header[1] or "off" in header[1]):
        fmt = "daily"
    elif unique_dates and not (hour_like and dates.size == 1):
        fmt = "daily"
    elif not unique_dates and hour_like:
        fmt = "hourly"
    else:
        raise DataError(f"{path}: cannot tell hourly from daily records")

    report = IngestReport(fmt)
    if fmt == "daily":
        order = np.argsort(dates, kind="stable")
        return DailyBivariateSeries(dates[order], np.column_stack([second, third])[order]), report
    hourly = HourlySeries(dates, second.astype(np.int64), third)
    if normalize_clock_change:
        hourly, report.normalized_days = normalize_dst(hourly)
    return aggregate_daily(hourly), report


def write_daily(series: DailyBivariateSeries, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["date", "offpeak", "peak"])
        for d, (a, b) in zip(series.dates, series.values):
            w.writerow([str(d), repr(float(a)), repr(float(b))])
