"""Predictive-distribution post-processing.

Raw per-level quantile predictions come out of the models unordered and
possibly crossing.  This module repairs the crossing, fits a normal
distribution in log space (lognormal in original units), and provides
closed-form CRPS and threshold-exceedance probabilities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import std_normal_cdf, std_normal_pdf, std_normal_quantile

__all__ = [
    "QuantileSet",
    "NormalDist",
    "rearrange",
    "fit_normal",
    "exceedance",
    "crps_normal",
    "crps_from_quantiles",
]

SIGMA_FLOOR = 1e-6


@dataclass(frozen=True)
class QuantileSet:
    """Predicted values at a fixed grid of quantile levels (log space)."""

    levels: tuple
    values: tuple

    def __post_init__(self):
        if len(self.levels) != len(self.values):
            raise ValueError("levels and values must have the same length")
        lev = np.asarray(self.levels, dtype=float)
        if np.any(lev <= 0) or np.any(lev >= 1):
            raise ValueError("levels must lie in (0, 1)")
        if np.any(np.diff(lev) <= 0):
            raise ValueError("levels must be strictly increasing")

    @property
    def is_monotone(self) -> bool:
        return bool(np.all(np.diff(self.values) >= 0))


@dataclass(frozen=True)
class NormalDist:
    """Normal predictive distribution in log space."""

    mu: float
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    def quantile(self, tau: float) -> float:
        return self.mu + self.sigma * std_normal_quantile(tau)


def rearrange(qs: QuantileSet) -> QuantileSet:
    """Repair quantile crossing by monotone rearrangement (sorting).

    Levels are kept, the multiset of values is preserved.  Sorting never
    increases the pinball loss against any observation.
    """
    values = np.asarray(qs.values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise ValueError("non-finite quantile values")
    return QuantileSet(levels=tuple(qs.levels), values=tuple(np.sort(values)))


def fit_normal(qs: QuantileSet) -> NormalDist:
    """Least-squares fit of a normal distribution to repaired quantiles.

    Regresses the predicted values on the standard-normal quantiles of
    their levels; the slope is sigma (floored at SIGMA_FLOOR) and the
    intercept is mu.
    """
    levels = np.asarray(qs.levels, dtype=float)
    values = np.asarray(qs.values, dtype=float)
    if levels.size < 2:
        raise ValueError("need at least two levels to fit a normal")
    z = std_normal_quantile(levels)
    zc = z - z.mean()
    denom = float(np.dot(zc, zc))
    slope = float(np.dot(zc, values)) / denom
    sigma = max(slope, SIGMA_FLOOR)
    mu = float(values.mean() - slope * z.mean())
    if sigma == SIGMA_FLOOR and np.allclose(values, values[0]):
        mu = float(values[0])
    return NormalDist(mu=mu, sigma=sigma)


def exceedance(d: NormalDist, threshold_raw: float, epsilon: float) -> float:
    """P(concentration > threshold) under the fitted log-space normal.

    The threshold is in original concentration units; epsilon must match
    the offset used by the feature log transform.
    """
    if threshold_raw <= 0:
        raise ValueError("threshold must be positive")
    z = (math.log(threshold_raw + epsilon) - d.mu) / d.sigma
    return float(1.0 - std_normal_cdf(z))


def crps_normal(d: NormalDist, y: float) -> float:
    """Closed-form CRPS of a normal forecast against observation y."""
    z = (y - d.mu) / d.sigma
    return float(
        d.sigma
        * (
            z * (2.0 * std_normal_cdf(z) - 1.0)
            + 2.0 * std_normal_pdf(z)
            - 1.0 / math.sqrt(math.pi)
        )
    )


def crps_from_quantiles(qs: QuantileSet, y: float) -> float:
    """Quantile-decomposition CRPS approximation.

    Twice the mean pinball loss over the grid levels; converges to the
    exact CRPS as the grid becomes dense.
    """
    from .models import pinball

    levels = np.asarray(qs.levels, dtype=float)
    values = np.asarray(qs.values, dtype=float)
    losses = [pinball(y, q, tau) for q, tau in zip(values, levels)]
    return float(2.0 * np.mean(losses))
