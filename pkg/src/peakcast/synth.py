"""Synthetic hourly air-quality data for tests and benchmarks.

The generator mimics the shape of real urban NO2: lognormal levels with
diurnal and weekly cycles, autocorrelated noise, coupling to an
exogenous forecast signal, calendar effects and rare peak bursts.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .features import HourlySeries, write_series_csv

__all__ = ["SynthConfig", "generate", "write_dataset", "conditional_log_std"]


@dataclass(frozen=True)
class SynthConfig:
    days: int = 365
    seed: int = 42
    base_log_level: float = 3.7          # ~ 40 ug/m3 median
    diurnal_amplitude: float = 0.35
    weekly_amplitude: float = 0.12
    ar_coefficient: float = 0.8
    noise_scale: float = 0.12            # innovation sd of the AR(1) term
    exo_coupling: float = 0.5
    synoptic_scale: float = 1.0          # day-scale weather-regime swings
    peak_rate_per_day: float = 0.06
    peak_amplitude: float = 1.5

    def __post_init__(self):
        if self.days < 30:
            raise ValueError("need at least 30 days")
        if not 0.0 <= self.ar_coefficient < 1.0:
            raise ValueError("AR coefficient must lie in [0, 1)")


def conditional_log_std(cfg: SynthConfig) -> float:
    """Stationary sd of the AR(1) log-noise component."""
    return cfg.noise_scale / np.sqrt(1.0 - cfg.ar_coefficient**2)


def generate(cfg: SynthConfig):
    """Return (no2, o3, exo) HourlySeries plus the calendar DataFrame."""
    rng = np.random.default_rng(cfg.seed)
    n = cfg.days * 24
    index = pd.date_range("2017-01-01T00:00:00Z", periods=n, freq="1h")
    t = np.arange(n, dtype=float)
    hour = index.hour.to_numpy()
    weekday = index.weekday.to_numpy()

    diurnal = cfg.diurnal_amplitude * (
        np.sin(2 * np.pi * (t - 8.0) / 24.0)
        + 0.5 * np.sin(2 * np.pi * t / 12.0)
    )
    weekly = cfg.weekly_amplitude * np.cos(2 * np.pi * t / 168.0)
    yearly = 0.4 * cfg.diurnal_amplitude * np.cos(2 * np.pi * t / 8766.0)

    # exogenous "forecast" signal, smooth and known in advance; the
    # synoptic term gives it multi-day swings so it carries day-to-day
    # information at a fixed hour, like a weather-regime covariate
    win = np.hanning(72)
    win = win / np.sqrt(np.sum(win**2))   # unit-variance smoothing kernel
    synoptic = cfg.synoptic_scale * np.convolve(rng.normal(0, 1.0, n), win,
                                                mode="same")
    exo = (np.sin(2 * np.pi * t / 24.0 + 1.0)
           + 0.3 * np.sin(2 * np.pi * t / 8766.0) + synoptic)
    exo = exo + np.convolve(rng.normal(0, 0.2, n), np.ones(12) / 12.0,
                            mode="same")

    ar = np.empty(n)
    ar[0] = rng.normal(0, conditional_log_std(cfg))
    eps = rng.normal(0, cfg.noise_scale, n)
    for i in range(1, n):
        ar[i] = cfg.ar_coefficient * ar[i - 1] + eps[i]

    calendar = _make_calendar(index, rng)
    day_idx = (index.tz_localize(None).normalize()
               .map(lambda d: d.date()))
    bank = calendar["bank_holiday"].reindex(day_idx).to_numpy()
    traffic = calendar["heavy_traffic"].reindex(day_idx).to_numpy()
    cal_effect = cfg.weekly_amplitude * (-1.6 * bank + 1.2 * traffic)

    peaks = np.zeros(n)
    n_peaks = rng.poisson(cfg.peak_rate_per_day * cfg.days)
    starts = rng.integers(0, n - 8, size=n_peaks)
    for s in starts:
        length = int(rng.integers(3, 7))
        shape = cfg.peak_amplitude * np.hanning(length + 2)[1:-1]
        peaks[s:s + length] = np.maximum(peaks[s:s + length], shape)

    log_no2 = (cfg.base_log_level + diurnal + weekly + yearly + ar
               + cfg.exo_coupling * exo + cal_effect + peaks)
    no2 = np.exp(log_no2)

    # ozone: anti-correlated diurnal shape with its own noise
    log_o3 = 3.2 - 0.6 * diurnal - 0.3 * yearly + rng.normal(
        0, cfg.noise_scale, n)
    o3 = np.exp(log_o3)

    return (
        HourlySeries("no2", pd.Series(no2, index=index)),
        HourlySeries("o3", pd.Series(o3, index=index)),
        HourlySeries("exo_forecast", pd.Series(exo, index=index)),
        calendar,
    )


def _make_calendar(index: pd.DatetimeIndex, rng) -> pd.DataFrame:
    # pad a week either side so day-lagged lookups stay covered
    first = index.min().tz_localize(None).normalize() - pd.Timedelta(days=8)
    last = index.max().tz_localize(None).normalize() + pd.Timedelta(days=8)
    days = pd.date_range(first, last, freq="1D")
    m = len(days)
    bank = np.zeros(m, dtype=int)
    bank[rng.choice(m, size=max(1, m // 36), replace=False)] = 1
    traffic = np.zeros(m, dtype=int)
    traffic[rng.choice(m, size=max(1, m // 30), replace=False)] = 1
    month = days.month
    school = ((month == 7) | (month == 8) | (month == 1)).astype(int)
    return pd.DataFrame(
        {"bank_holiday": bank, "heavy_traffic": traffic,
         "school_holiday": school},
        index=days.date,
    )


def write_dataset(cfg: SynthConfig, outdir) -> dict:
    """Generate and write the CSV bundle; returns the file paths."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    no2, o3, exo, calendar = generate(cfg)
    paths = {}
    for s in (no2, o3, exo):
        p = outdir / f"{s.name}.csv"
        write_series_csv(s, p)
        paths[s.name] = str(p)
    cal_path = outdir / "calendar.csv"
    out = calendar.reset_index().rename(columns={"index": "date"})
    out["date"] = out["date"].astype(str)
    out.to_csv(cal_path, index=False)
    paths["calendar"] = str(cal_path)
    return paths
