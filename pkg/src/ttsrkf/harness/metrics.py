"""Predictive metrics over a test set."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np


@dataclass
class MetricsRow:
    t: int
    rmse: float
    nll: float
    wall_ms: float = 0.0
    min_eig: float | None = None
    diverged_at: int | None = None

    @property
    def finite(self) -> bool:
        return math.isfinite(self.rmse) and math.isfinite(self.nll)


def rmse(means, targets) -> float:
    r = np.asarray(means, dtype=float) - np.asarray(targets, dtype=float)
    return float(np.sqrt(np.mean(r**2)))


def nll(means, variances, targets) -> float:
    """Summed Gaussian negative log-likelihood ``0.5 sum(log(2 pi s2) + r**2 / s2)``.

    A zero variance with a nonzero residual yields ``+inf`` (with a warning);
    a negative variance yields ``nan``.
    """
    r = np.asarray(means, dtype=float) - np.asarray(targets, dtype=float)
    s2 = np.asarray(variances, dtype=float)
    if np.any(s2 < 0):
        warnings.warn("negative predictive variance; NLL undefined", RuntimeWarning, stacklevel=2)
        return math.nan
    zero = s2 == 0
    if np.any(zero & (r != 0)):
        warnings.warn("zero predictive variance with nonzero residual; NLL is +inf", RuntimeWarning, stacklevel=2)
        return math.inf
    if np.any(zero):
        warnings.warn("zero predictive variance with zero residual; NLL is -inf", RuntimeWarning, stacklevel=2)
        return -math.inf
    return float(0.5 * np.sum(np.log(2 * np.pi * s2) + r**2 / s2))


def compute_metrics(means, variances, targets, t: int = 0, wall_ms: float = 0.0) -> MetricsRow:
    means = np.asarray(means, dtype=float)
    targets = np.asarray(targets, dtype=float)
    variances = np.asarray(variances, dtype=float)
    if not means.shape == variances.shape == targets.shape:
        raise ValueError("means, variances and targets must have equal shapes")
    return MetricsRow(t, rmse(means, targets), nll(means, variances, targets), wall_ms)
