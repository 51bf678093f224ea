"""Hourly-series ingestion and design-matrix construction.

Series are aligned on a common hourly UTC grid, log-transformed, and
expanded into lag, Fourier-seasonal, calendar and exogenous-forecast
columns.  One FeatureFrame is built per (horizon, anchor hour) task with
one sample per day; lag features only ever look backwards from the
issue time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

__all__ = [
    "HourlySeries",
    "FeatureFrame",
    "FeatureConfig",
    "DataError",
    "default_no2_lags",
    "read_series_csv",
    "write_series_csv",
    "read_calendar_csv",
    "align",
    "log_transform",
    "inverse_log_transform",
    "lag_columns",
    "fourier_columns",
    "calendar_columns",
    "build_frame",
]

HOUR = pd.Timedelta(hours=1)
FOURIER_EPOCH = pd.Timestamp("1970-01-01T00:00:00Z")
DEFAULT_PERIODS = (12.0, 24.0, 168.0, 8766.0)
MAX_FFILL_HOURS = 3
CALENDAR_FLAGS = ("bank_holiday", "heavy_traffic", "school_holiday")


class DataError(Exception):
    """Raised for malformed or insufficient input data."""


@dataclass
class HourlySeries:
    """One named hourly series; missing values are NaN."""

    name: str
    data: pd.Series

    def __post_init__(self):
        idx = self.data.index
        if not isinstance(idx, pd.DatetimeIndex):
            raise DataError(f"series {self.name!r}: index must be datetimes")
        if idx.tz is None:
            raise DataError(f"series {self.name!r}: timestamps must be UTC")
        if idx.has_duplicates:
            dups = idx[idx.duplicated()].unique()
            raise DataError(
                f"series {self.name!r}: duplicate timestamps {list(dups[:5])}")
        if not idx.is_monotonic_increasing:
            raise DataError(f"series {self.name!r}: timestamps not sorted")
        self.data = self.data.astype(float)


@dataclass
class FeatureFrame:
    """Design matrix, log-space target and issue times for one task."""

    column_names: list
    X: np.ndarray
    y: np.ndarray
    issue_times: pd.DatetimeIndex
    horizon_hours: int

    def __post_init__(self):
        if self.X.shape != (len(self.y), len(self.column_names)):
            raise DataError("FeatureFrame shape mismatch")
        if len(self.issue_times) != len(self.y):
            raise DataError("issue_times length mismatch")
        if np.isnan(self.X).any() or np.isnan(self.y).any():
            raise DataError("FeatureFrame contains missing entries")

    def __len__(self):
        return len(self.y)

    def with_target(self, y: np.ndarray) -> "FeatureFrame":
        """Same design matrix with a replaced target (residual modelling)."""
        return FeatureFrame(self.column_names, self.X, np.asarray(y, float),
                            self.issue_times, self.horizon_hours)

    def subset(self, mask) -> "FeatureFrame":
        idx = np.asarray(mask)
        return FeatureFrame(self.column_names, self.X[idx], self.y[idx],
                            self.issue_times[idx], self.horizon_hours)


def default_no2_lags() -> list:
    """Recent-hours lags 1-5 plus the 11-13h band repeated daily, 9 days."""
    lags = list(range(1, 6))
    for day in range(9):
        lags.extend(24 * day + h for h in (11, 12, 13))
    return sorted(set(lags))


@dataclass
class FeatureConfig:
    """Everything build_frame needs besides the data itself."""

    target: str = "no2"
    epsilon: float = 1.0
    lags: dict = field(default_factory=lambda: {
        "no2": default_no2_lags(),
        "o3": [24, 48, 72, 96],
    })
    fourier_periods: tuple = DEFAULT_PERIODS
    calendar_day_lags: tuple = (1, 2, 7)
    anchor_hour: int = 10
    min_samples: int = 100
    exogenous: tuple = ()

    def __post_init__(self):
        if not 0 <= self.anchor_hour <= 23:
            raise DataError("anchor_hour must lie in [0, 23]")
        if self.epsilon <= 0:
            raise DataError("epsilon must be positive")
        for name, lags in self.lags.items():
            if sorted(set(lags)) != list(lags) or any(h < 1 for h in lags):
                raise DataError(
                    f"lags for {name!r} must be distinct, sorted and >= 1")


# ---------------------------------------------------------------------------
# CSV ingestion


def read_series_csv(path) -> HourlySeries:
    """Read `timestamp,<name>` CSV; empty fields become missing."""
    df = pd.read_csv(path)
    if df.shape[1] != 2 or df.columns[0] != "timestamp":
        raise DataError(f"{path}: expected header 'timestamp,<name>'")
    name = df.columns[1]
    ts = pd.to_datetime(df["timestamp"], utc=True)
    return HourlySeries(name=name, data=pd.Series(df[name].values, index=ts))


def write_series_csv(series: HourlySeries, path) -> None:
    out = pd.DataFrame({
        "timestamp": series.data.index.strftime("%Y-%m-%dT%H:%M:%SZ"),
        series.name: series.data.values,
    })
    out.to_csv(path, index=False)


def read_calendar_csv(path) -> pd.DataFrame:
    """Read the day-flag table: date,bank_holiday,heavy_traffic,school_holiday."""
    df = pd.read_csv(path)
    expected = ["date", *CALENDAR_FLAGS]
    if list(df.columns) != expected:
        raise DataError(f"{path}: expected header {','.join(expected)}")
    df["date"] = pd.to_datetime(df["date"]).dt.date
    if df["date"].duplicated().any():
        raise DataError(f"{path}: duplicate dates")
    table = df.set_index("date")
    if not table.isin([0, 1]).all().all():
        raise DataError(f"{path}: flags must be 0/1")
    return table.astype(int)


# ---------------------------------------------------------------------------
# transforms


def align(series: list, span: tuple) -> list:
    """Reindex every series onto the same hourly grid over span.

    Gaps of up to MAX_FFILL_HOURS consecutive hours are forward-filled;
    anything longer stays missing.
    """
    start, end = pd.Timestamp(span[0]), pd.Timestamp(span[1])
    if start.tz is None:
        start = start.tz_localize("UTC")
    if end.tz is None:
        end = end.tz_localize("UTC")
    if end < start:
        raise DataError("empty span")
    grid = pd.date_range(start, end, freq="1h")
    out = []
    for s in series:
        data = s.data.reindex(grid)
        out.append(HourlySeries(name=s.name, data=_fill_short_gaps(data)))
    return out


def _fill_short_gaps(data: pd.Series) -> pd.Series:
    """Forward-fill only NaN runs of length <= MAX_FFILL_HOURS."""
    isna = data.isna().to_numpy()
    if not isna.any():
        return data
    run_id = np.cumsum(~isna)
    run_len = pd.Series(np.ones(len(data)), index=data.index) \
        .groupby(run_id).transform("sum").to_numpy() - 1
    fillable = isna & (run_len <= MAX_FFILL_HOURS)
    filled = data.ffill()
    return data.where(~fillable, filled)


def log_transform(s: HourlySeries, epsilon: float = 1.0) -> HourlySeries:
    """v -> ln(v + epsilon); inverse is exp(.) - epsilon."""
    vals = s.data
    if (vals.dropna() < 0).any():
        raise DataError(f"series {s.name!r}: negative values")
    return HourlySeries(name=f"{s.name}_log", data=np.log(vals + epsilon))


def inverse_log_transform(values, epsilon: float = 1.0):
    return np.exp(values) - epsilon


def lag_columns(s: HourlySeries, lags) -> pd.DataFrame:
    """Columns `<name>_lag_<h>` where the value at t is s(t - h)."""
    cols = {}
    for h in lags:
        if h < 1:
            raise DataError("lags must be >= 1")
        cols[f"{s.name}_lag_{h}"] = s.data.shift(h)
    return pd.DataFrame(cols, index=s.data.index)


def _format_period(p: float) -> str:
    return str(int(p)) if float(p).is_integer() else str(p)


def fourier_columns(timestamps: pd.DatetimeIndex, periods) -> pd.DataFrame:
    """sin/cos pairs of 2*pi*t/P with t in hours since the Unix epoch."""
    t = (timestamps - FOURIER_EPOCH) / HOUR
    t = np.asarray(t, dtype=float)
    cols = {}
    for p in periods:
        if p <= 0:
            raise DataError("periods must be positive")
        w = 2.0 * math.pi * t / p
        tag = _format_period(p)
        cols[f"sin_{tag}h"] = np.sin(w)
        cols[f"cos_{tag}h"] = np.cos(w)
    return pd.DataFrame(cols, index=timestamps)


def calendar_columns(timestamps: pd.DatetimeIndex, table: pd.DataFrame,
                     day_lags) -> pd.DataFrame:
    """Day-flag columns at the given day lags plus hour and weekday."""
    flags = table.copy()
    flags.index = pd.DatetimeIndex(flags.index)
    days = timestamps.tz_localize(None).normalize()
    missing = set()
    shifted_by_lag = {}
    for d in day_lags:
        shifted = days - pd.Timedelta(days=d)
        shifted_by_lag[d] = shifted
        missing.update(shifted.difference(flags.index).date)
    if missing:
        listed = sorted(missing)
        raise DataError(
            f"calendar table is missing {len(listed)} dates, "
            f"e.g. {listed[:5]}")
    cols = {}
    for flag in flags.columns:
        for d in day_lags:
            values = flags[flag].reindex(shifted_by_lag[d]).to_numpy()
            cols[f"{flag}_d{d}"] = values.astype(float)
    frame = pd.DataFrame(cols, index=timestamps)
    frame["hour"] = timestamps.hour.astype(float)
    frame["weekday"] = timestamps.weekday.astype(float)
    return frame


# ---------------------------------------------------------------------------
# frame assembly


def build_frame(cfg: FeatureConfig, series: dict, calendar: pd.DataFrame,
                horizon_hours: int, anchor_hour: int | None = None
                ) -> FeatureFrame:
    """Assemble the per-horizon design matrix.

    `series` maps name -> aligned HourlySeries in ORIGINAL units; the log
    transform is applied here so the target and lag features share it.
    Exogenous forecast series are taken at the target instant untransformed.
    Samples with any missing dependency are dropped.
    """
    if not 1 <= horizon_hours <= 60:
        raise DataError("horizon must lie in [1, 60]")
    anchor = cfg.anchor_hour if anchor_hour is None else anchor_hour
    if cfg.target not in series:
        raise DataError(f"target series {cfg.target!r} not provided")

    some = next(iter(series.values()))
    grid = some.data.index
    issue_times = grid[grid.hour == anchor]
    target_times = issue_times + pd.Timedelta(hours=horizon_hours)
    in_range = target_times.isin(grid)
    issue_times, target_times = issue_times[in_range], target_times[in_range]

    logged = {name: log_transform(s, cfg.epsilon)
              for name, s in series.items() if name not in cfg.exogenous}

    blocks = []
    names = []
    # lag features, evaluated at the issue time
    for name in cfg.lags:
        if name not in logged:
            raise DataError(f"lag spec references unknown series {name!r}")
        lagged = lag_columns(logged[name], cfg.lags[name])
        block = lagged.loc[issue_times]
        blocks.append(block.to_numpy())
        names.extend(block.columns)
    # calendar flags and time-of-day, at the (deterministic) target instant
    cal = calendar_columns(target_times, calendar, cfg.calendar_day_lags)
    blocks.append(cal.to_numpy())
    names.extend(cal.columns)
    # seasonal features at the target instant
    fourier = fourier_columns(target_times, cfg.fourier_periods)
    blocks.append(fourier.to_numpy())
    names.extend(fourier.columns)
    # exogenous forecasts, known at issue time for the target instant
    for name in cfg.exogenous:
        if name not in series:
            raise DataError(f"exogenous series {name!r} not provided")
        blocks.append(series[name].data.loc[target_times]
                      .to_numpy()[:, None])
        names.append(name)

    X = np.hstack(blocks)
    y = logged[cfg.target].data.loc[target_times].to_numpy()

    complete = ~(np.isnan(X).any(axis=1) | np.isnan(y))
    X, y = X[complete], y[complete]
    issue_times = issue_times[complete]
    if len(y) < cfg.min_samples:
        raise DataError(
            f"only {len(y)} complete samples for horizon {horizon_hours}, "
            f"need at least {cfg.min_samples}")
    return FeatureFrame(column_names=list(names), X=X, y=y,
                        issue_times=issue_times,
                        horizon_hours=horizon_hours)
