"""Shared numerical helpers for the test suite."""

import numpy as np


def finite_difference_gradient(f, x, h=1e-5, coords=None):
    """Central finite differences of a scalar function on a flat vector.

    Returns (gradient, checked_coordinate_indices). When `coords` is given,
    only those coordinates are evaluated (others are NaN in the output).
    """
    x = np.asarray(x, dtype=np.float64)
    if coords is None:
        coords = np.arange(x.size)
    grad = np.full(x.size, np.nan)
    for i in coords:
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        grad[i] = (f(xp) - f(xm)) / (2.0 * h)
    return grad, np.asarray(coords)


def max_rel_error(a, b, floor=1e-6):
    """Elementwise |a-b| / max(floor, |a|, |b|), reduced by max."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = np.maximum(floor, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.abs(a - b) / scale)) if a.size else 0.0
