"""Command-line front end.

Exit codes: 0 success, 2 invalid configuration or usage, 3 data errors.
All file outputs land under the configured output directory; every file
carries its units in the schema (log-space columns are suffixed _log,
everything else is in original concentration units).
"""

from __future__ import annotations

import json
import math
import sys
from pathlib import Path

import click
import numpy as np
import pandas as pd
import yaml

from . import dist as dist_mod
from . import evaluation as eval_mod
from . import metrics as metrics_mod
from .config import ConfigError, RunConfig, default_config_dict, load_config
from .core import std_normal_cdf
from .features import (DataError, align, build_frame, inverse_log_transform,
                       read_calendar_csv, read_series_csv)
from .models import (ModelSpec, QuantileGrid, fit_from_spec, load_model,
                     save_model)
from .synth import SynthConfig, write_dataset

EXIT_CONFIG = 2
EXIT_DATA = 3


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _load_inputs(cfg: RunConfig):
    """Read and align every configured series; returns (series, calendar)."""
    all_series = []
    for name, path in {**cfg.series, **cfg.exogenous}.items():
        s = read_series_csv(path)
        if s.name != name:
            raise DataError(
                f"{path}: series column {s.name!r}, config says {name!r}")
        all_series.append(s)
    start = min(s.data.index.min() for s in all_series)
    end = max(s.data.index.max() for s in all_series)
    aligned = align(all_series, (start, end))
    calendar = read_calendar_csv(cfg.calendar)
    return {s.name: s for s in aligned}, calendar


def _config(path) -> RunConfig:
    try:
        return load_config(path)
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))


def _quantile_names(levels):
    return [f"q{int(round(tau * 100)):02d}" for tau in levels]


@click.group()
def main():
    """Probabilistic air-quality forecasting toolkit."""


@main.command()
@click.option("--days", default=365, show_default=True)
@click.option("--seed", default=42, show_default=True)
@click.option("--out", default="data", show_default=True,
              help="Directory for the generated CSV bundle.")
@click.option("--emit-config", default=None,
              help="Also write a ready-to-run YAML manifest here.")
def synth(days, seed, out, emit_config):
    """Generate a synthetic dataset (no2, o3, exo_forecast, calendar)."""
    try:
        paths = write_dataset(SynthConfig(days=days, seed=seed), out)
    except ValueError as exc:
        _fail(EXIT_CONFIG, str(exc))
    click.echo(f"wrote {len(paths)} files under {out}")
    if emit_config:
        cfg = default_config_dict(data_dir=out, seed=seed)
        with open(emit_config, "w") as fh:
            yaml.safe_dump(cfg, fh, sort_keys=False)
        click.echo(f"wrote config {emit_config}")


@main.command()
@click.option("--config", "config_path", required=True)
@click.option("--horizon", required=True, type=int)
def features(config_path, horizon):
    """Build and export the design matrix for one horizon."""
    cfg = _config(config_path)
    try:
        series, calendar = _load_inputs(cfg)
        frame = build_frame(cfg.features, series, calendar, horizon)
    except DataError as exc:
        _fail(EXIT_DATA, str(exc))
    outdir = Path(cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    df = pd.DataFrame(frame.X, columns=frame.column_names)
    df.insert(0, "issue_time",
              frame.issue_times.strftime("%Y-%m-%dT%H:%M:%SZ"))
    df["target_log"] = frame.y
    path = outdir / f"features_h{horizon}.csv"
    df.to_csv(path, index=False)
    click.echo(f"wrote {path} ({len(df)} samples, "
               f"{len(frame.column_names)} features)")


def _model_path(cfg: RunConfig, kind: str, horizon: int) -> Path:
    return Path(cfg.output_dir) / f"model_{kind}_h{horizon}.pkl"


@main.command()
@click.option("--config", "config_path", required=True)
@click.option("--model", "kind", required=True)
@click.option("--horizon", required=True, type=int)
def train(config_path, kind, horizon):
    """Train one model on all available samples for one horizon."""
    cfg = _config(config_path)
    spec = _find_spec(cfg, kind)
    try:
        series, calendar = _load_inputs(cfg)
        frame = build_frame(cfg.features, series, calendar, horizon)
        model = fit_from_spec(spec, frame, QuantileGrid(cfg.levels))
    except DataError as exc:
        _fail(EXIT_DATA, str(exc))
    Path(cfg.output_dir).mkdir(parents=True, exist_ok=True)
    path = _model_path(cfg, kind, horizon)
    save_model(model, path)
    click.echo(f"trained {kind} h={horizon} on {len(frame)} samples "
               f"in {model.train_seconds:.2f}s -> {path}")


def _find_spec(cfg: RunConfig, kind: str) -> ModelSpec:
    for spec in cfg.models:
        if spec.kind == kind:
            return spec
    _fail(EXIT_CONFIG, f"model {kind!r} is not in the config "
          f"(have {[s.kind for s in cfg.models]})")


@main.command()
@click.option("--config", "config_path", required=True)
@click.option("--model", "kind", required=True)
@click.option("--horizon", required=True, type=int)
@click.option("--at", "at_time", required=True,
              help="Forecast issue time, ISO-8601 UTC.")
def predict(config_path, kind, horizon, at_time):
    """Forecast one distribution from a previously trained model."""
    cfg = _config(config_path)
    path = _model_path(cfg, kind, horizon)
    if not path.exists():
        _fail(EXIT_CONFIG, f"no trained model at {path}; run `train` first")
    model = load_model(path)
    try:
        series, calendar = _load_inputs(cfg)
        frame = build_frame(cfg.features, series, calendar, horizon)
    except DataError as exc:
        _fail(EXIT_DATA, str(exc))
    issue = pd.Timestamp(at_time)
    if issue.tz is None:
        issue = issue.tz_localize("UTC")
    where = np.flatnonzero(frame.issue_times == issue)
    if where.size == 0:
        _fail(EXIT_DATA, f"no complete feature row at issue time {issue}")
    row = frame.X[where[0]]
    raw = model.predict_quantiles(row.reshape(1, -1))[0]
    qs = dist_mod.rearrange(dist_mod.QuantileSet(
        levels=tuple(model.grid.levels), values=tuple(raw)))
    nd = dist_mod.fit_normal(qs)
    eps = cfg.features.epsilon
    p_exc = dist_mod.exceedance(nd, cfg.threshold, eps)
    names = _quantile_names(model.grid.levels)
    values = inverse_log_transform(np.asarray(qs.values), eps)
    header = ["issue_time", "horizon", *names, "mu", "sigma",
              f"p_exceed_{cfg.threshold:g}"]
    record = [issue.strftime("%Y-%m-%dT%H:%M:%SZ"), str(horizon),
              *[f"{v:.6f}" for v in values],
              f"{nd.mu:.6f}", f"{nd.sigma:.6f}", f"{p_exc:.6f}"]
    click.echo(",".join(header))
    click.echo(",".join(record))


def _run_evaluation(cfg: RunConfig):
    series, calendar = _load_inputs(cfg)
    return eval_mod.run_experiment(
        series, calendar, cfg.features, cfg.models, cfg.horizons,
        folds=cfg.folds, gap_hours=cfg.gap_hours,
        grid=QuantileGrid(cfg.levels), threshold=cfg.threshold,
        p_alarm=cfg.p_alarm, global_seed=cfg.seed)


@main.command()
@click.option("--config", "config_path", required=True)
def evaluate(config_path):
    """Run the full blocked-CV comparison and write all reports."""
    cfg = _config(config_path)
    try:
        result = _run_evaluation(cfg)
    except DataError as exc:
        _fail(EXIT_DATA, str(exc))
    outdir = Path(cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)

    with open(outdir / "experiment.json", "w") as fh:
        json.dump(result.report_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(outdir / "timings.json", "w") as fh:
        json.dump({"train_seconds": result.timings}, fh, indent=2,
                  sort_keys=True)
        fh.write("\n")
    result.predictions.to_csv(outdir / "predictions.csv", index=False)

    if result.scores is None:
        for err in result.errors:
            click.echo(f"FAILED {err['model']} h={err['horizon']}: "
                       f"{err['error']}", err=True)
        _fail(EXIT_DATA, "score matrix incomplete, skipping rank test")
    result.scores.to_csv(outdir / "scores.csv")
    qr = eval_mod.quade(result.scores)
    with open(outdir / "quade.json", "w") as fh:
        json.dump(qr.as_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    click.echo(f"wrote experiment.json, scores.csv, quade.json, "
               f"predictions.csv, timings.json under {outdir}")
    _echo_ranks(qr)


def _echo_ranks(qr):
    click.echo(f"Quade statistic {qr.statistic:.4f}  p-value "
               f"{qr.p_value:.3g}{' (degenerate)' if qr.degenerate else ''}")
    for name, rank in sorted(qr.avg_weighted_rank.items(),
                             key=lambda kv: -kv[1]):
        click.echo(f"  {name:<8} {rank:.3f}")


@main.command()
@click.option("--config", "config_path", required=True)
@click.option("--scores", "scores_path", default=None,
              help="Score matrix CSV; defaults to <output_dir>/scores.csv.")
def compare(config_path, scores_path):
    """Rank the models from an existing score matrix (Quade test)."""
    cfg = _config(config_path)
    path = Path(scores_path or Path(cfg.output_dir) / "scores.csv")
    if not path.exists():
        _fail(EXIT_DATA, f"{path} not found; run `evaluate` first")
    scores = pd.read_csv(path, index_col=0)
    qr = eval_mod.quade(scores)
    with open(Path(cfg.output_dir) / "quade.json", "w") as fh:
        json.dump(qr.as_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    _echo_ranks(qr)


@main.command()
@click.option("--config", "config_path", required=True)
@click.option("--threshold", default=None, type=float,
              help="Exceedance threshold; defaults to the config value.")
@click.option("--p-alarm", default=None, type=float,
              help="Alarm probability cut; defaults to the config value.")
@click.option("--model", "kind", default=None,
              help="Restrict to one model kind.")
def peaks(config_path, threshold, p_alarm, kind):
    """Peak-alarm evaluation from an `evaluate` run's predictions."""
    cfg = _config(config_path)
    threshold = cfg.threshold if threshold is None else threshold
    p_alarm = cfg.p_alarm if p_alarm is None else p_alarm
    pred_path = Path(cfg.output_dir) / "predictions.csv"
    if not pred_path.exists():
        _fail(EXIT_DATA, f"{pred_path} not found; run `evaluate` first")
    preds = pd.read_csv(pred_path)
    if kind is not None:
        preds = preds[preds["model"] == kind]
        if preds.empty:
            _fail(EXIT_DATA, f"no predictions for model {kind!r}")

    eps = cfg.features.epsilon
    z = (math.log(threshold + eps) - preds["mu"]) / preds["sigma"]
    p_exc = 1.0 - std_normal_cdf(z.to_numpy())
    labels = (preds["y_raw"] > threshold).astype(int)
    out = pd.DataFrame({
        "model": preds["model"],
        "issue_time": preds["issue_time"],
        "horizon": preds["horizon"],
        "p_exceed": p_exc,
        "alarm": (p_exc > p_alarm).astype(int),
        "label": labels,
    })
    outdir = Path(cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    out.to_csv(outdir / "peaks.csv", index=False)

    summary = {}
    for name, grp in out.groupby("model"):
        sc = metrics_mod.alarm_scores(grp["p_exceed"].to_numpy(),
                                      grp["label"].to_numpy(), p_alarm)
        summary[name] = {"tp": sc.tp, "fp": sc.fp, "fn": sc.fn, "tn": sc.tn,
                         "auc": sc.auc}
        click.echo(f"{name:<8} TP={sc.tp} FP={sc.fp} FN={sc.fn} TN={sc.tn} "
                   f"AUC={'n/a' if sc.auc is None else f'{sc.auc:.3f}'}")
    with open(outdir / "peaks_summary.json", "w") as fh:
        json.dump({"threshold": threshold, "p_alarm": p_alarm,
                   "models": summary}, fh, indent=2, sort_keys=True)
        fh.write("\n")


if __name__ == "__main__":
    main()
