"""Numeric primitives shared across the toolkit.

Standard-normal CDF / quantile function and the weighted empirical
quantile used to read distributions out of forest leaf aggregates.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtr, ndtri

__all__ = [
    "check_level",
    "std_normal_cdf",
    "std_normal_pdf",
    "std_normal_quantile",
    "weighted_quantile",
]

_SQRT_2PI = np.sqrt(2.0 * np.pi)


def check_level(tau: float) -> float:
    """Validate a quantile level, returning it unchanged."""
    if not 0.0 < tau < 1.0:
        raise ValueError(f"quantile level must lie in (0, 1), got {tau}")
    return float(tau)


def std_normal_cdf(x):
    """Standard normal CDF, accurate to machine precision.

    Accepts scalars or arrays.
    """
    return ndtr(x)


def std_normal_pdf(x):
    """Standard normal density."""
    x = np.asarray(x, dtype=float)
    out = np.exp(-0.5 * x * x) / _SQRT_2PI
    return float(out) if out.ndim == 0 else out


def std_normal_quantile(p):
    """Inverse of the standard normal CDF.

    Raises ValueError outside the open unit interval.
    """
    p_arr = np.asarray(p, dtype=float)
    if np.any(p_arr <= 0.0) or np.any(p_arr >= 1.0):
        raise ValueError("probability must lie strictly inside (0, 1)")
    out = ndtri(p_arr)
    return float(out) if out.ndim == 0 else out


def weighted_quantile(values, weights, tau: float) -> float:
    """Left-continuous weighted empirical quantile.

    Returns the smallest value v whose cumulative normalized weight
    (over samples with value <= v) reaches tau.  With uniform weights
    this is the classic "smallest value with ecdf >= tau" quantile.
    """
    tau = check_level(tau)
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if values.size == 0:
        raise ValueError("empty sample")
    if values.shape != weights.shape:
        raise ValueError("values and weights must have the same length")
    if np.any(np.isnan(values)) or np.any(np.isnan(weights)):
        raise ValueError("NaN in weighted sample")
    if np.any(weights < 0):
        raise ValueError("negative weight")
    total = weights.sum()
    if total <= 0:
        raise ValueError("total weight must be positive")

    order = np.argsort(values, kind="stable")
    v = values[order]
    cw = np.cumsum(weights[order]) / total
    # guard against rounding keeping the last cumulative weight below 1
    cw[-1] = 1.0
    # tolerance so exact-boundary cumulative weights are not missed to
    # float accumulation noise
    idx = int(np.searchsorted(cw, tau - 1e-9, side="left"))
    return float(v[idx])
