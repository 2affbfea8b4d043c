"""Least-squares fits for convergence rates and decay slopes."""

from typing import Sequence

import numpy as np

MIN_RATE_POINTS = 3


def fit_slope(x: Sequence[float], y: Sequence[float]) -> float:
    """Slope of the least-squares line through (x, y)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) != len(y) or len(x) < 2:
        raise ValueError(f"need at least two paired points, got {len(x)} and {len(y)}")
    slope, _ = np.polyfit(x, y, 1)
    return float(slope)


def fit_rate(h: Sequence[float], errors: Sequence[float]) -> float:
    """
    Observed order p in error ~ C h^p, fitted on log-log data.

    Raises:
        ValueError: with fewer than three points or non-positive data
    """
    h = np.asarray(h, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if len(h) < MIN_RATE_POINTS:
        raise ValueError(f"a rate needs at least {MIN_RATE_POINTS} points, got {len(h)}")
    if np.any(h <= 0) or np.any(errors <= 0):
        raise ValueError("rates need strictly positive mesh sizes and errors")
    return fit_slope(np.log(h), np.log(errors))


def fit_decay(layers: Sequence[int], tails: Sequence[float]) -> float:
    """
    Decay constant c in tail ~ exp(-c * layer), fitted on the positive tails.

    Returns 0.0 when fewer than two positive tails are available.
    """
    layers = np.asarray(layers, dtype=float)
    tails = np.asarray(tails, dtype=float)
    positive = tails > 0
    if positive.sum() < 2:
        return 0.0
    return -fit_slope(layers[positive], np.log(tails[positive]))
