"""Experiment orchestration: blocked CV, scoring, rank comparison.

Runs every (model, horizon, fold) cell of the comparison, aggregates
fold scores into one dataset per horizon, and applies the weighted-rank
(Quade) test across those datasets.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.stats import f as f_dist
from scipy.stats import rankdata

from . import dist as dist_mod
from . import metrics as metrics_mod
from .features import (DataError, FeatureConfig, build_frame,
                       inverse_log_transform)
from .models import ModelSpec, QuantileGrid, fit_from_spec

__all__ = [
    "CVPlan",
    "QuadeResult",
    "ExperimentResult",
    "make_cv_plan",
    "cell_seed",
    "run_experiment",
    "quade",
    "grid_search",
]

DEFAULT_GAP_HOURS = 264   # max lag depth (9 days) plus a 48 h margin


@dataclass(frozen=True)
class CVPlan:
    """Contiguous time-blocked folds with a purge gap around each block."""

    folds: int
    gap_hours: int
    issue_times: pd.DatetimeIndex
    fold_of: np.ndarray

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        test = self.issue_times[self.fold_of == fold]
        gap = pd.Timedelta(hours=self.gap_hours)
        lo, hi = test.min() - gap, test.max() + gap
        keep = (self.fold_of != fold) & \
            ((self.issue_times < lo) | (self.issue_times > hi))
        idx = np.flatnonzero(keep)
        if idx.size == 0:
            raise DataError(f"fold {fold}: empty training set after purge")
        return idx


def make_cv_plan(issue_times: pd.DatetimeIndex, folds: int = 5,
                 gap_hours: int = DEFAULT_GAP_HOURS) -> CVPlan:
    """Split issue days into contiguous blocks, one test block per fold."""
    if folds < 2:
        raise DataError("need at least two folds")
    days = issue_times.tz_localize(None).normalize()
    unique_days = days.unique().sort_values()
    if len(unique_days) < folds:
        raise DataError(f"{len(unique_days)} days cannot fill {folds} folds")
    blocks = np.array_split(np.arange(len(unique_days)), folds)
    day_fold = {unique_days[i]: f for f, blk in enumerate(blocks) for i in blk}
    fold_of = np.asarray([day_fold[d] for d in days], dtype=np.int64)
    plan = CVPlan(folds=folds, gap_hours=gap_hours,
                  issue_times=issue_times, fold_of=fold_of)
    for f in range(folds):
        plan.train_indices(f)   # raises early if a fold is unusable
    return plan


def cell_seed(global_seed: int, model: str, horizon: int, fold: int) -> int:
    """Stable per-cell seed derived from the experiment seed."""
    key = f"{global_seed}|{model}|{horizon}|{fold}".encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "big")


@dataclass
class ExperimentResult:
    records: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    predictions: pd.DataFrame | None = None
    scores: pd.DataFrame | None = None       # horizons x models, mean CRPS
    timings: dict = field(default_factory=dict)

    def report_dict(self) -> dict:
        """Deterministic JSON-ready report (timings kept separate)."""
        return {
            "schema": "peakcast-experiment/1",
            "records": self.records,
            "errors": self.errors,
        }


def run_experiment(series: dict, calendar: pd.DataFrame,
                   feature_cfg: FeatureConfig, model_specs: list,
                   horizons, folds: int = 5,
                   gap_hours: int = DEFAULT_GAP_HOURS,
                   grid: QuantileGrid = QuantileGrid(),
                   threshold: float = 180.0, p_alarm: float = 0.5,
                   global_seed: int = 0) -> ExperimentResult:
    """Fit and score every model on every horizon under blocked CV."""
    result = ExperimentResult()
    pred_rows = []
    score_cols = {spec.kind: {} for spec in model_specs}
    levels = list(grid.levels)

    for horizon in horizons:
        frame = build_frame(feature_cfg, series, calendar, horizon)
        plan = make_cv_plan(frame.issue_times, folds, gap_hours)
        for spec in model_specs:
            fold_stats = []
            train_seconds = 0.0
            try:
                for fold in range(folds):
                    seed = cell_seed(global_seed, spec.kind, horizon, fold)
                    seeded = ModelSpec(spec.kind, dict(spec.params), seed)
                    tr = frame.subset(plan.train_indices(fold))
                    te = frame.subset(plan.test_indices(fold))
                    model = fit_from_spec(seeded, tr, grid)
                    train_seconds += model.train_seconds
                    stats, rows = _score_fold(
                        model, te, levels, feature_cfg.epsilon, threshold,
                        p_alarm)
                    for row in rows:
                        row.update(model=spec.kind, horizon=horizon,
                                   fold=fold)
                    pred_rows.extend(rows)
                    fold_stats.append(stats)
            except Exception as exc:   # noqa: BLE001 - cell-level isolation
                result.errors.append({
                    "model": spec.kind, "horizon": int(horizon),
                    "error": f"{type(exc).__name__}: {exc}",
                })
                continue
            record = _aggregate(spec.kind, horizon, fold_stats, levels)
            result.records.append(record)
            result.timings[f"{spec.kind}/{horizon}"] = train_seconds
            score_cols[spec.kind][int(horizon)] = record["crps_log_mean"]

    result.predictions = pd.DataFrame(pred_rows)
    if not result.errors:
        result.scores = pd.DataFrame(score_cols)
        result.scores.index.name = "horizon"
        result.scores = result.scores.sort_index()
    return result


def _score_fold(model, test_frame, levels, epsilon, threshold, p_alarm):
    """Score one fitted model on one test fold."""
    raw_q = model.predict_quantiles(test_frame.X,
                                    columns=test_frame.column_names)
    repaired = np.sort(raw_q, axis=1)
    y_log = test_frame.y
    y_raw = inverse_log_transform(y_log, epsilon)

    crps_log, crps_q_log, crps_raw = [], [], []
    mus, sigmas, p_exc = [], [], []
    dense_levels = tuple((np.arange(1, 100)) / 100.0)
    dense_z = np.asarray(
        [dist_mod.std_normal_quantile(t) for t in dense_levels])
    for i in range(len(y_log)):
        qs = dist_mod.QuantileSet(levels=tuple(levels),
                                  values=tuple(repaired[i]))
        nd = dist_mod.fit_normal(qs)
        mus.append(nd.mu)
        sigmas.append(nd.sigma)
        crps_log.append(dist_mod.crps_normal(nd, y_log[i]))
        crps_q_log.append(dist_mod.crps_from_quantiles(qs, y_log[i]))
        # original-unit CRPS via a dense lognormal quantile grid
        dense_raw = inverse_log_transform(nd.mu + nd.sigma * dense_z, epsilon)
        qs_raw = dist_mod.QuantileSet(levels=dense_levels,
                                      values=tuple(dense_raw))
        crps_raw.append(dist_mod.crps_from_quantiles(qs_raw, y_raw[i]))
        p_exc.append(dist_mod.exceedance(nd, threshold, epsilon))

    median_idx = levels.index(0.5)
    med_raw = inverse_log_transform(repaired[:, median_idx], epsilon)
    pm = metrics_mod.point_metrics(med_raw, y_raw)
    rel = metrics_mod.reliability(repaired, levels, y_log)
    sharp = metrics_mod.sharpness(repaired, levels)
    labels = y_raw > threshold
    alarms = metrics_mod.alarm_scores(np.asarray(p_exc), labels, p_alarm)

    stats = {
        "n": len(y_log),
        "crps_log_mean": float(np.mean(crps_log)),
        "crps_quantile_log_mean": float(np.mean(crps_q_log)),
        "crps_raw_mean": float(np.mean(crps_raw)),
        "rmse_raw": pm.rmse, "mae_raw": pm.mae, "bias_raw": pm.bias,
        "coverage": list(rel.coverage),
        "sharpness": sharp,
        "tp": alarms.tp, "fp": alarms.fp, "fn": alarms.fn, "tn": alarms.tn,
        "auc": alarms.auc,
    }
    rows = [
        {
            "issue_time": str(test_frame.issue_times[i]),
            "y_log": float(y_log[i]), "y_raw": float(y_raw[i]),
            "mu": float(mus[i]), "sigma": float(sigmas[i]),
            "p_exceed": float(p_exc[i]), "label": int(labels[i]),
        }
        for i in range(len(y_log))
    ]
    return stats, rows


def _aggregate(kind, horizon, fold_stats, levels):
    """Average fold statistics into one per-dataset record."""
    n_total = sum(s["n"] for s in fold_stats)
    fold_crps = [s["crps_log_mean"] for s in fold_stats]
    cov = np.average([s["coverage"] for s in fold_stats], axis=0,
                     weights=[s["n"] for s in fold_stats])
    record = {
        "model": kind,
        "horizon": int(horizon),
        "n": int(n_total),
        "crps_log_mean": float(np.mean(fold_crps)),
        "crps_log_fold_std": float(np.std(fold_crps)),
        "crps_log_fold_means": [float(c) for c in fold_crps],
        "crps_quantile_log_mean": float(np.mean(
            [s["crps_quantile_log_mean"] for s in fold_stats])),
        "crps_raw_mean": float(np.mean(
            [s["crps_raw_mean"] for s in fold_stats])),
        "rmse_raw": float(np.mean([s["rmse_raw"] for s in fold_stats])),
        "mae_raw": float(np.mean([s["mae_raw"] for s in fold_stats])),
        "bias_raw": float(np.mean([s["bias_raw"] for s in fold_stats])),
        "coverage": {f"{t:g}": float(c) for t, c in zip(levels, cov)},
        "sharpness": {
            key: float(np.mean([s["sharpness"][key] for s in fold_stats]))
            for key in fold_stats[0]["sharpness"]
        },
        "tp": int(sum(s["tp"] for s in fold_stats)),
        "fp": int(sum(s["fp"] for s in fold_stats)),
        "fn": int(sum(s["fn"] for s in fold_stats)),
        "tn": int(sum(s["tn"] for s in fold_stats)),
    }
    aucs = [s["auc"] for s in fold_stats if s["auc"] is not None]
    record["auc"] = float(np.mean(aucs)) if aucs else None
    return record


# ---------------------------------------------------------------------------
# Quade weighted-rank test


@dataclass(frozen=True)
class QuadeResult:
    statistic: float
    p_value: float
    avg_weighted_rank: dict     # higher = better
    degenerate: bool

    def as_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "p_value": self.p_value,
            "avg_weighted_rank": self.avg_weighted_rank,
            "degenerate": self.degenerate,
        }


def quade(scores: pd.DataFrame, alpha: float = 0.05) -> QuadeResult:
    """Weighted-rank comparison of algorithms over datasets.

    Rows are datasets (horizons), columns algorithms, entries scores
    where lower is better.  Datasets are weighted by the rank of their
    score range.  The reported average weighted ranks are flipped so
    that higher means better.
    """
    M = scores.to_numpy(dtype=float)
    n, k = M.shape
    if n < 2 or k < 2:
        raise ValueError("need at least 2 datasets and 2 algorithms")
    if np.isnan(M).any():
        raise ValueError("score matrix must be complete")

    r = np.vstack([rankdata(row, method="average") for row in M])  # 1 = best
    ranges = M.max(axis=1) - M.min(axis=1)
    Q = rankdata(ranges, method="average")
    S = Q[:, None] * (r - (k + 1) / 2.0)
    A = float(np.sum(S * S))
    col_sums = S.sum(axis=0)
    B = float(np.sum(col_sums**2) / n)

    # average weighted ranks, reported with k = best (higher = better)
    flipped = (k + 1) - r
    W = (Q[:, None] * flipped).sum(axis=0) / (n * (n + 1) / 2.0)
    ranks = {str(c): float(w) for c, w in zip(scores.columns, W)}

    if A <= B + 1e-12 * max(A, 1.0):
        return QuadeResult(statistic=float("inf"), p_value=0.0,
                           avg_weighted_rank=ranks, degenerate=True)
    T = (n - 1) * B / (A - B)
    p = float(f_dist.sf(T, k - 1, (n - 1) * (k - 1)))
    return QuadeResult(statistic=float(T), p_value=p,
                       avg_weighted_rank=ranks, degenerate=False)


# ---------------------------------------------------------------------------
# hyperparameter search


def grid_search(kind: str, param_grid: list, frame, train_idx, val_idx,
                grid: QuantileGrid = QuantileGrid(), seed: int = 0):
    """Exhaustive search minimizing validation mean CRPS.

    The validation block must lie strictly after the training block.
    Returns (best_params, trace); the trace has one entry per grid point.
    """
    if not param_grid:
        raise ValueError("empty hyperparameter grid")
    train_idx = np.asarray(train_idx)
    val_idx = np.asarray(val_idx)
    t_max = frame.issue_times[train_idx].max()
    v_min = frame.issue_times[val_idx].min()
    if not t_max < v_min:
        raise ValueError("validation split must come strictly after training")
    tr = frame.subset(train_idx)
    va = frame.subset(val_idx)
    levels = tuple(grid.levels)
    trace = []
    for params in param_grid:
        model = fit_from_spec(ModelSpec(kind, dict(params), seed), tr, grid)
        q = np.sort(model.predict_quantiles(va.X), axis=1)
        crps = np.mean([
            dist_mod.crps_from_quantiles(
                dist_mod.QuantileSet(levels=levels, values=tuple(q[i])),
                va.y[i])
            for i in range(len(va))
        ])
        trace.append({"params": dict(params), "val_crps": float(crps)})
    best = min(trace, key=lambda t: t["val_crps"])
    return best["params"], trace
