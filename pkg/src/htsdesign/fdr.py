"""Lfdr statistic, step-up procedures and realized error metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .mixture import StageModel, lfdr_from_log_odds, nonnull_log_odds


@dataclass(frozen=True)
class RejectionSet:
    """Rejected positions (in significance order) and the step-up rank."""

    indices: np.ndarray
    threshold_rank: int

    def __len__(self):
        return self.threshold_rank

    @classmethod
    def empty(cls):
        return cls(np.empty(0, dtype=np.intp), 0)


def _check_alpha(alpha):
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")


def _check_probabilities(values, name):
    v = np.asarray(values, dtype=float)
    if v.ndim != 1:
        raise ValueError(f"{name} must be a 1-d vector")
    if np.any(~np.isfinite(v)) or np.any(v < 0) or np.any(v > 1):
        raise ValueError(f"{name} must lie in [0, 1]")
    return v


def lfdr_statistic(x, model: StageModel):
    """Posterior probability of the null given replicate mean(s) ``x``.

    Equal to ``(1-p) f0(x) / f(x)`` with the replicate-adjusted densities.
    Computed through the log-odds, which is exact to rounding and avoids
    0/0 in the far tails.
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("x must be finite")
    out = lfdr_from_log_odds(nonnull_log_odds(x, model))
    return float(out) if out.ndim == 0 else out


def lfdr_step_up(lfdr_values, alpha: float) -> RejectionSet:
    """Reject the ``k`` smallest Lfdr values, ``k`` the largest rank whose
    running mean of sorted Lfdr values is at most ``alpha``.

    Ties are ordered by original position.
    """
    _check_alpha(alpha)
    v = _check_probabilities(lfdr_values, "lfdr_values")
    if v.size == 0:
        return RejectionSet.empty()
    order = np.argsort(v, kind="stable")
    k = lfdr_step_up_count(v[order], alpha)
    return RejectionSet(order[:k], k)


def lfdr_step_up_count(sorted_lfdr, alpha: float) -> int:
    """Step-up rank for values already sorted ascending (no validation)."""
    running_mean = np.cumsum(sorted_lfdr) / np.arange(1, len(sorted_lfdr) + 1)
    below = np.flatnonzero(running_mean <= alpha)
    return int(below[-1]) + 1 if below.size else 0


def two_sided_p_value(xbar, sigma0_sq: float, r: int):
    """Two-sided normal p-value of a mean of ``r`` null replicates."""
    if not sigma0_sq > 0:
        raise ValueError("sigma0_sq must be positive")
    if int(r) != r or r < 1:
        raise ValueError("r must be a positive integer")
    xbar = np.asarray(xbar, dtype=float)
    if not np.all(np.isfinite(xbar)):
        raise ValueError("xbar must be finite")
    z = np.abs(xbar) * np.sqrt(r / sigma0_sq)
    out = 2.0 * ndtr(-z)
    return float(out) if out.ndim == 0 else out


def bh_step_up(p_values, alpha: float) -> RejectionSet:
    """Benjamini-Hochberg: reject the ``k`` smallest p-values, ``k`` the
    largest rank with ``p_(k) <= k * alpha / m``.  Ties by original position."""
    _check_alpha(alpha)
    v = _check_probabilities(p_values, "p_values")
    m = v.size
    if m == 0:
        return RejectionSet.empty()
    order = np.argsort(v, kind="stable")
    below = np.flatnonzero(v[order] <= alpha * np.arange(1, m + 1) / m)
    if below.size == 0:
        return RejectionSet.empty()
    k = int(below[-1]) + 1
    return RejectionSet(order[:k], k)


def _rejected_theta(rejected: RejectionSet, theta):
    theta = np.asarray(theta)
    idx = np.asarray(rejected.indices, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= theta.size):
        raise ValueError("rejected index out of bounds")
    return theta[idx]


def realized_fdp(rejected: RejectionSet, theta) -> float:
    """Fraction of rejections that are null; zero when nothing is rejected."""
    t = _rejected_theta(rejected, theta)
    if t.size == 0:
        return 0.0
    return float(np.count_nonzero(t == 0)) / t.size


def true_positive_count(rejected: RejectionSet, theta) -> int:
    return int(np.count_nonzero(_rejected_theta(rejected, theta) == 1))
