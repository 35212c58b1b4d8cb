"""Two-component zero-mean normal mixture with replicate-averaged data.

A compound is null with probability ``1 - p`` and non-null with probability
``p``.  A single measurement is ``mu + eps`` with ``eps ~ N(0, sigma0_sq)``
and, for non-nulls, ``mu ~ N(0, sigma_mu_sq)`` (``mu = 0`` for nulls).
Averaging ``r`` replicates shrinks only the noise term, so

    null:      N(0, sigma0_sq / r)
    non-null:  N(0, sigma_mu_sq + sigma0_sq / r)

Replicate matrices are never built; simulations draw the replicate mean
directly from these distributions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .rng import generator, seed_record

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class MixtureParams:
    """Non-null proportion, noise variance and signal variance.

    ``mean_shift`` is the location removed from the raw data before any
    analysis; it is carried for reporting only and never enters a density.
    """

    p: float
    sigma0_sq: float
    sigma_mu_sq: float
    mean_shift: float = 0.0

    def __post_init__(self):
        for name in ("p", "sigma0_sq", "sigma_mu_sq", "mean_shift"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"p must lie in [0, 1], got {self.p}")
        if self.sigma0_sq <= 0:
            raise ValueError(f"sigma0_sq must be positive, got {self.sigma0_sq}")
        if self.sigma_mu_sq < 0:
            raise ValueError(f"sigma_mu_sq must be non-negative, got {self.sigma_mu_sq}")

    @property
    def sigma1_sq(self) -> float:
        """Single-replicate marginal variance of a non-null."""
        return self.sigma_mu_sq + self.sigma0_sq

    def with_p(self, p: float) -> "MixtureParams":
        return MixtureParams(p, self.sigma0_sq, self.sigma_mu_sq, self.mean_shift)

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "sigma0_sq": self.sigma0_sq,
            "sigma_mu_sq": self.sigma_mu_sq,
            "mean_shift": self.mean_shift,
        }


def stage2_params(params: MixtureParams, precision_ratio: float) -> MixtureParams:
    """Confirmatory-stage parameters.

    The precision ratio divides the measurement-error variance only; the
    signal variance is unchanged.
    """
    if precision_ratio <= 0:
        raise ValueError("precision_ratio must be positive")
    return MixtureParams(
        params.p, params.sigma0_sq / precision_ratio, params.sigma_mu_sq, params.mean_shift
    )


@dataclass(frozen=True)
class StageModel:
    params: MixtureParams
    replicates: int

    def __post_init__(self):
        _check_replicates(self.replicates)

    @property
    def null_var(self) -> float:
        return self.params.sigma0_sq / self.replicates

    @property
    def alt_var(self) -> float:
        return self.params.sigma_mu_sq + self.params.sigma0_sq / self.replicates

    @property
    def null_sd(self) -> float:
        return math.sqrt(self.null_var)

    @property
    def alt_sd(self) -> float:
        return math.sqrt(self.alt_var)


@dataclass(frozen=True)
class SimulatedScreen:
    theta: np.ndarray
    values: np.ndarray
    seed: tuple = field(default=())
    # true per-compound effects; simulation-internal
    signal: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.theta.shape != self.values.shape:
            raise ValueError("theta and values must have the same length")

    def __len__(self):
        return len(self.values)


def _check_replicates(r):
    if int(r) != r or r < 1:
        raise ValueError(f"replicate count must be a positive integer, got {r}")


def effective_null_sd(sigma0_sq: float, r: int) -> float:
    """Standard deviation of a mean of ``r`` null replicates."""
    if not sigma0_sq > 0:
        raise ValueError(f"sigma0_sq must be positive, got {sigma0_sq}")
    _check_replicates(r)
    return math.sqrt(sigma0_sq / r)


def effective_alt_sd(params: MixtureParams, r: int) -> float:
    """Standard deviation of a mean of ``r`` non-null replicates."""
    _check_replicates(r)
    return math.sqrt(params.sigma_mu_sq + params.sigma0_sq / r)


def simulate_screen(model: StageModel, m: int, seed) -> SimulatedScreen:
    """Draw latent states and replicate means for ``m`` compounds.

    Each non-null gets a signal ``mu ~ N(0, sigma_mu_sq)``; every compound
    gets noise with variance ``sigma0_sq / r``.  The signal is kept on the
    screen so a follow-up stage can re-measure the same compounds.
    """
    if int(m) != m or m < 1:
        raise ValueError(f"m must be a positive integer, got {m}")
    record = seed_record(seed)
    rng = generator(record)
    theta = (rng.random(m) < model.params.p).astype(np.int8)
    signal = np.where(theta == 1, rng.standard_normal(m) * math.sqrt(model.params.sigma_mu_sq), 0.0)
    values = signal + rng.standard_normal(m) * model.null_sd
    return SimulatedScreen(theta, values, record, signal)


def simulate_stage2_from_selection(selected_theta, model2: StageModel, seed,
                                   signal=None) -> SimulatedScreen:
    """Confirmatory measurements for compounds whose states are known.

    Latent states are carried over from the primary screen and fresh noise
    is drawn at the stage-II precision.  Passing ``signal`` (the carried
    compounds' true effects) re-measures the same effects; without it the
    effects are redrawn from ``N(0, sigma_mu_sq)``, which gives the same
    marginal stage-II densities but forgets what selection learned.
    """
    theta = np.asarray(selected_theta, dtype=np.int8)
    if theta.ndim != 1 or theta.size == 0:
        raise ValueError("selection must be a nonempty 1-d vector")
    if np.any((theta != 0) & (theta != 1)):
        raise ValueError("latent states must be 0 or 1")
    record = seed_record(seed)
    noise = generator(seed_record(record, 0)).standard_normal(theta.size)
    if signal is None:
        signal = fresh_signal(theta, model2.params.sigma_mu_sq, record, theta.size)
    else:
        signal = np.where(theta == 1, np.asarray(signal, dtype=float), 0.0)
        if signal.shape != theta.shape:
            raise ValueError("signal must match the selection in length")
    values = signal + noise * model2.null_sd
    return SimulatedScreen(theta.copy(), values, record, signal)


def fresh_signal(theta, sigma_mu_sq, record, n):
    """Redrawn effects for the first ``n`` of ``theta`` from substream ``record + (1,)``."""
    z = generator(seed_record(record, 1)).standard_normal(n)
    return np.where(np.asarray(theta)[:n] == 1, z * math.sqrt(sigma_mu_sq), 0.0)


def _normal_logpdf(x, var):
    return -0.5 * (_LOG_2PI + np.log(var) + x * x / var)


def mixture_density(x, model: StageModel):
    """Return ``((1-p) f0(x), (1-p) f0(x) + p f1(x))`` for a stage model."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("x must be finite")
    p = model.params.p
    null = (1.0 - p) * np.exp(_normal_logpdf(x, model.null_var))
    marginal = null + p * np.exp(_normal_logpdf(x, model.alt_var))
    if x.ndim == 0:
        return float(null), float(marginal)
    return null, marginal


def nonnull_log_odds(x, model: StageModel):
    """Posterior log-odds of being non-null, ``log(p f1(x) / ((1-p) f0(x)))``.

    A quadratic in ``x``; used for ranking because it does not saturate the
    way the posterior probability does for large ``|x|``.
    """
    p = model.params.p
    v0, v1 = model.null_var, model.alt_var
    with np.errstate(divide="ignore"):
        intercept = math.log(p) - math.log1p(-p) if 0.0 < p < 1.0 else (
            math.inf if p == 1.0 else -math.inf)
    x = np.asarray(x, dtype=float)
    return intercept + 0.5 * math.log(v0 / v1) + 0.5 * (1.0 / v0 - 1.0 / v1) * x * x


def lfdr_from_log_odds(log_odds):
    return expit(-np.asarray(log_odds, dtype=float))
