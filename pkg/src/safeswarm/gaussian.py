"""Diagonal Gaussian log-probabilities, KL divergence, and entropy."""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .errors import DimensionError
from .tensor import Tensor

LOG_2PI = math.log(2.0 * math.pi)


def _last_axis(t: Tensor) -> int:
    if t.data.ndim == 0:
        raise DimensionError("expected at least a 1-D tensor")
    return t.data.ndim - 1


def gaussian_log_prob(mean, log_std, action) -> Tensor:
    """Log density of `action` under N(mean, diag(exp(log_std))^2).

    Inputs share a trailing component axis; the result drops that axis, so a
    [d] input yields a scalar and [n, d] inputs yield [n].
    """
    mean, log_std, action = T._as_tensor(mean), T._as_tensor(log_std), T._as_tensor(action)
    if mean.data.shape != log_std.data.shape or mean.data.shape != action.data.shape:
        raise DimensionError("mean, log_std and action shapes must agree")
    ax = _last_axis(mean)
    d = mean.data.shape[ax]
    inv_std = T.exp(T.neg(log_std))
    z = T.mul(T.sub(action, mean), inv_std)
    quad = T.sum_(T.mul(z, z), axis=ax)
    return T.sub(
        T.mul(T.add(quad, 2.0 * T.sum_(log_std, axis=ax)), -0.5),
        0.5 * d * LOG_2PI,
    )


def diag_gaussian_kl(mean1, log_std1, mean2, log_std2) -> Tensor:
    """KL(N1 || N2) for diagonal Gaussians, summed over the component axis."""
    mean1, log_std1 = T._as_tensor(mean1), T._as_tensor(log_std1)
    mean2, log_std2 = T._as_tensor(mean2), T._as_tensor(log_std2)
    if not (mean1.data.shape == log_std1.data.shape == mean2.data.shape == log_std2.data.shape):
        raise DimensionError("all four inputs must share a shape")
    ax = _last_axis(mean1)
    var1 = T.exp(T.mul(log_std1, 2.0))
    inv_var2 = T.exp(T.mul(log_std2, -2.0))
    dmean = T.sub(mean1, mean2)
    per_dim = T.add(
        T.sub(log_std2, log_std1),
        T.sub(T.mul(T.mul(T.add(var1, T.mul(dmean, dmean)), inv_var2), 0.5), 0.5),
    )
    return T.sum_(per_dim, axis=ax)


def gaussian_entropy(log_std) -> Tensor:
    """Entropy of a diagonal Gaussian, summed over the component axis."""
    log_std = T._as_tensor(log_std)
    ax = _last_axis(log_std)
    d = log_std.data.shape[ax]
    return T.add(T.sum_(log_std, axis=ax), 0.5 * d * (LOG_2PI + 1.0))


def sample(mean: np.ndarray, log_std: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw one action per row (plain numpy; no gradient flow)."""
    return mean + np.exp(log_std) * rng.standard_normal(mean.shape)
