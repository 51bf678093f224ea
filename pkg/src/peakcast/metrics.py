"""Point metrics, calibration diagnostics and peak-alarm scores."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "PointMetrics",
    "ReliabilityTable",
    "AlarmScores",
    "point_metrics",
    "reliability",
    "sharpness",
    "alarm_scores",
]


@dataclass(frozen=True)
class PointMetrics:
    rmse: float
    mae: float
    bias: float


@dataclass(frozen=True)
class ReliabilityTable:
    """Observed coverage per nominal quantile level."""

    levels: tuple
    coverage: tuple

    def as_dict(self) -> dict:
        return {f"{tau:g}": c for tau, c in zip(self.levels, self.coverage)}


@dataclass(frozen=True)
class AlarmScores:
    tp: int
    fp: int
    fn: int
    tn: int
    auc: float | None
    roc: tuple   # (fpr, tpr) points, sorted by fpr


def point_metrics(pred, obs) -> PointMetrics:
    """RMSE, MAE and bias of a point forecast (bias = mean(pred - obs))."""
    pred = np.asarray(pred, dtype=float)
    obs = np.asarray(obs, dtype=float)
    if pred.shape != obs.shape or pred.size == 0:
        raise ValueError("pred and obs must be nonempty and equal length")
    err = pred - obs
    return PointMetrics(
        rmse=float(np.sqrt(np.mean(err * err))),
        mae=float(np.mean(np.abs(err))),
        bias=float(np.mean(err)),
    )


def reliability(quantile_values: np.ndarray, levels, obs) -> ReliabilityTable:
    """Fraction of observations at or below each forecast quantile.

    quantile_values has one row per sample, one column per level.
    """
    q = np.asarray(quantile_values, dtype=float)
    obs = np.asarray(obs, dtype=float)
    if q.shape != (obs.shape[0], len(levels)):
        raise ValueError("quantile matrix shape does not match levels/obs")
    cov = (obs[:, None] <= q).mean(axis=0)
    return ReliabilityTable(levels=tuple(float(t) for t in levels),
                            coverage=tuple(float(c) for c in cov))


def sharpness(quantile_values: np.ndarray, levels,
              pairs=((0.05, 0.95), (0.25, 0.75))) -> dict:
    """Mean central-interval widths for the requested level pairs."""
    q = np.asarray(quantile_values, dtype=float)
    levels = [float(t) for t in levels]
    widths = {}
    for lo, hi in pairs:
        if lo not in levels or hi not in levels:
            raise ValueError(f"levels ({lo}, {hi}) not in the grid")
        i, j = levels.index(lo), levels.index(hi)
        widths[f"{lo:g}-{hi:g}"] = float(np.mean(q[:, j] - q[:, i]))
    return widths


def alarm_scores(p_exceed, labels, p_alarm: float = 0.5) -> AlarmScores:
    """Confusion counts at the alarm cut plus a threshold-sweep ROC.

    An alarm fires on strict inequality p > p_alarm.  AUC is reported as
    None when the labels are degenerate (all positive or all negative).
    """
    p = np.asarray(p_exceed, dtype=float)
    y = np.asarray(labels).astype(bool)
    if p.shape != y.shape:
        raise ValueError("probabilities and labels must have equal length")
    alarm = p > p_alarm
    tp = int(np.sum(alarm & y))
    fp = int(np.sum(alarm & ~y))
    fn = int(np.sum(~alarm & y))
    tn = int(np.sum(~alarm & ~y))

    npos, nneg = tp + fn, fp + tn
    if npos == 0 or nneg == 0:
        return AlarmScores(tp, fp, fn, tn, auc=None, roc=())

    # sweep the cut over all distinct probabilities (plus the extremes)
    cuts = np.unique(p)
    points = [(1.0, 1.0)]
    for c in cuts:
        fired = p > c
        points.append((np.sum(fired & ~y) / nneg, np.sum(fired & y) / npos))
    points.append((0.0, 0.0))
    roc = sorted(set(points))
    fpr = np.array([a for a, _ in roc])
    tpr = np.array([b for _, b in roc])
    auc = float(np.sum(0.5 * (tpr[1:] + tpr[:-1]) * np.diff(fpr)))
    return AlarmScores(tp, fp, fn, tn, auc=auc, roc=tuple(roc))
