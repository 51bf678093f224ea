"""Run configuration: one YAML manifest drives every CLI command."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .features import DEFAULT_PERIODS, FeatureConfig, default_no2_lags
from .models import DEFAULT_LEVELS, MODEL_KINDS, ModelSpec

__all__ = ["ConfigError", "RunConfig", "load_config", "default_config_dict"]


class ConfigError(Exception):
    """Invalid run configuration; message names the offending field."""


@dataclass
class RunConfig:
    series: dict                  # name -> csv path (measured series)
    exogenous: dict               # name -> csv path (forecast series)
    calendar: str
    features: FeatureConfig
    models: list                  # ModelSpec
    horizons: list
    folds: int
    gap_hours: int
    levels: tuple
    threshold: float
    p_alarm: float
    seed: int
    output_dir: str


def default_config_dict(data_dir: str = "data", output_dir: str = "out",
                        seed: int = 42) -> dict:
    """A complete manifest for the synthetic dataset layout."""
    return {
        "series": {
            "no2": f"{data_dir}/no2.csv",
            "o3": f"{data_dir}/o3.csv",
        },
        "exogenous": {"exo_forecast": f"{data_dir}/exo_forecast.csv"},
        "calendar": f"{data_dir}/calendar.csv",
        "features": {
            "target": "no2",
            "epsilon": 1.0,
            "anchor_hour": 10,
            "min_samples": 100,
            "lags": {"no2": default_no2_lags(), "o3": [24, 48, 72, 96]},
            "fourier_periods": list(DEFAULT_PERIODS),
            "calendar_day_lags": [1, 2, 7],
        },
        "models": [
            {"kind": "QGB", "params": {"max_depth": 1, "rounds": 600}},
            {"kind": "QRF"},
            {"kind": "QKNN"},
            {"kind": "QKNNL", "params": {"ridge": 0.1}},
            {"kind": "QRFL", "params": {"ridge": 0.1}},
        ],
        "horizons": [1, 6, 24],
        "cv": {"folds": 5, "gap_hours": 264},
        "levels": list(DEFAULT_LEVELS),
        "threshold": 180.0,
        "p_alarm": 0.5,
        "seed": seed,
        "output_dir": output_dir,
    }


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    _require(isinstance(raw, dict), "config root must be a mapping")
    base = path.parent

    def resolve(p):
        p = Path(p)
        return str(p if p.is_absolute() else base / p)

    series = {k: resolve(v) for k, v in dict(raw.get("series", {})).items()}
    _require(bool(series), "series: at least one measured series is required")
    exogenous = {k: resolve(v)
                 for k, v in dict(raw.get("exogenous", {})).items()}
    _require("calendar" in raw, "calendar: path is required")
    calendar = resolve(raw["calendar"])
    for name, p in {**series, **exogenous, "calendar": calendar}.items():
        _require(Path(p).exists(), f"{name}: file {p} does not exist")

    fraw = dict(raw.get("features", {}))
    target = fraw.get("target", "no2")
    _require(target in series, f"features.target: {target!r} not in series")
    try:
        features = FeatureConfig(
            target=target,
            epsilon=float(fraw.get("epsilon", 1.0)),
            lags={k: list(v) for k, v in fraw.get(
                "lags", {"no2": default_no2_lags()}).items()},
            fourier_periods=tuple(fraw.get("fourier_periods",
                                           DEFAULT_PERIODS)),
            calendar_day_lags=tuple(fraw.get("calendar_day_lags", (1, 2, 7))),
            anchor_hour=int(fraw.get("anchor_hour", 10)),
            min_samples=int(fraw.get("min_samples", 100)),
            exogenous=tuple(exogenous),
        )
    except Exception as exc:
        raise ConfigError(f"features: {exc}") from exc

    models = []
    for i, m in enumerate(raw.get("models", [])):
        m = dict(m)
        kind = m.pop("kind", None)
        _require(kind in MODEL_KINDS,
                 f"models[{i}].kind: must be one of {MODEL_KINDS}")
        seed = int(m.pop("seed", raw.get("seed", 0)))
        params = dict(m.pop("params", {}))
        _require(not m, f"models[{i}]: unknown keys {sorted(m)}")
        models.append(ModelSpec(kind=kind, params=params, seed=seed))
    _require(bool(models), "models: at least one model is required")

    horizons = [int(h) for h in raw.get("horizons", [1, 6, 24])]
    _require(all(1 <= h <= 60 for h in horizons),
             "horizons: every horizon must lie in [1, 60]")

    cv = dict(raw.get("cv", {}))
    folds = int(cv.get("folds", 5))
    gap_hours = int(cv.get("gap_hours", 264))
    _require(folds >= 2, "cv.folds: must be >= 2")
    _require(gap_hours >= 0, "cv.gap_hours: must be >= 0")

    levels = tuple(float(t) for t in raw.get("levels", DEFAULT_LEVELS))
    threshold = float(raw.get("threshold", 180.0))
    _require(threshold > 0, "threshold: must be positive")
    p_alarm = float(raw.get("p_alarm", 0.5))
    _require(0.0 < p_alarm < 1.0, "p_alarm: must lie in (0, 1)")

    return RunConfig(
        series=series, exogenous=exogenous, calendar=calendar,
        features=features, models=models, horizons=horizons,
        folds=folds, gap_hours=gap_hours, levels=levels,
        threshold=threshold, p_alarm=p_alarm,
        seed=int(raw.get("seed", 0)),
        output_dir=resolve(raw.get("output_dir", "out")),
    )
