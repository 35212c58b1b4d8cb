"""Estimating the mixture parameters from single-replicate pilot data.

Two routes:

* :func:`estimate_mc` -- posterior means under the priors
  ``pi(q) ∝ q**alpha`` and ``pi(sigma0_sq, sigma_mu_sq) ∝ (sigma0_sq + sigma_mu_sq)**-2``,
  computed by self-normalized importance sampling.  By default ``q`` is the
  null proportion ``1 - p``, which shrinks ``p`` toward zero; setting
  ``PriorConfig.prior_target = "nonnull"`` puts the exponent on ``p`` itself.
* :func:`estimate_em` -- maximum likelihood by EM for the zero-mean scale
  mixture, with asymptotic standard errors from the observed information.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats
from scipy.special import expit, logit, logsumexp

from .mixture import MixtureParams
from .rng import IMPORTANCE, generator, seed_record

log = logging.getLogger(__name__)

_LOG_2PI = math.log(2.0 * math.pi)
P_FLOOR = 1e-6


class DegenerateWeightsError(RuntimeError):
    """Importance weights collapsed onto too few draws."""


@dataclass(frozen=True)
class PriorConfig:
    prior_exponent_alpha: float = 5.58
    # Reserved: stored and reported, not used by the proposal construction.
    scott_berger_a: float = 5.0
    importance_samples: int = 10_000
    proposal_df: float = 5.0
    proposal_scale: float = 1.5
    prior_target: str = "null"

    def __post_init__(self):
        if self.prior_target not in ("null", "nonnull"):
            raise ValueError("prior_target must be 'null' or 'nonnull'")
        if self.importance_samples < 1000:
            raise ValueError("importance_samples must be at least 1000")
        if not self.prior_exponent_alpha > -1:
            raise ValueError("prior_exponent_alpha must exceed -1")
        if self.proposal_df <= 2 or self.proposal_scale <= 0:
            raise ValueError("proposal_df must exceed 2 and proposal_scale be positive")


@dataclass
class EstimationResult:
    params: MixtureParams
    posterior_sd: dict
    effective_sample_size: float
    method: str
    mc_se: dict = field(default_factory=dict)
    log_likelihood: float = float("nan")
    iterations: int = 0
    degenerate: bool = False
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        out = self.params.to_dict()
        out.update(
            method=self.method,
            posterior_sd=dict(self.posterior_sd),
            mc_se=dict(self.mc_se),
            effective_sample_size=self.effective_sample_size,
            log_likelihood=self.log_likelihood,
            iterations=self.iterations,
            degenerate=self.degenerate,
            notes=list(self.notes),
        )
        return out


def demean(values):
    """Subtract the sample mean; return ``(centered, mean)``."""
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        raise ValueError("cannot de-mean an empty vector")
    shift = float(x.mean())
    centered = x - shift
    # second pass removes the rounding residue of the first
    residue = float(centered.mean())
    return centered - residue, shift + residue


def _loglik_terms(x, p, s0, smu):
    """Per-point log mixture density; parameters may be arrays (broadcast)."""
    xsq = x * x
    v1 = s0 + smu
    with np.errstate(divide="ignore"):
        a = np.log1p(-p) - 0.5 * (_LOG_2PI + np.log(s0) + xsq / s0)
        b = np.log(p) - 0.5 * (_LOG_2PI + np.log(v1) + xsq / v1)
    return np.logaddexp(a, b)


def log_likelihood(values, params: MixtureParams) -> float:
    """``sum_i log[(1-p) N(x_i; 0, s0) + p N(x_i; 0, s0 + smu)]``."""
    if not isinstance(params, MixtureParams):
        raise TypeError("params must be MixtureParams")
    x = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("values must be finite")
    return float(math.fsum(_loglik_terms(x, params.p, params.sigma0_sq, params.sigma_mu_sq)))


# -- importance sampling ---------------------------------------------------

def _robust_start(x):
    """Moment-based starting point: MAD scale for the noise, sample
    variance for the total, tail excess for the proportion."""
    s0 = (stats.median_abs_deviation(x, scale="normal")) ** 2
    total = float(np.mean(x * x))
    tail = float(np.mean(np.abs(x) > 3.0 * math.sqrt(s0)))
    p = min(max(tail - 2.0 * stats.norm.sf(3.0), 1.0 / x.size), 0.5)
    smu = max((total - s0) / p, 0.1 * s0)
    return p, s0, smu


def _to_free(p, s0, smu):
    return np.array([logit(p), math.log(s0), math.log(smu)])


def _from_free(eta):
    eta = np.atleast_2d(eta)
    p = np.clip(expit(eta[:, 0]), P_FLOOR, 1.0 - P_FLOOR)
    return p, np.exp(eta[:, 1]), np.exp(eta[:, 2])


def _log_posterior_free(eta, x, alpha, on_null=True, chunk=64):
    """Log posterior density (up to a constant) in ``(logit p, log s0, log smu)``.

    Includes the Jacobian ``p (1-p) s0 smu`` of the change of variables.
    """
    p, s0, smu = _from_free(eta)
    out = np.empty(p.size)
    for lo in range(0, p.size, chunk):
        hi = min(lo + chunk, p.size)
        terms = _loglik_terms(x[None, :], p[lo:hi, None], s0[lo:hi, None], smu[lo:hi, None])
        out[lo:hi] = terms.sum(axis=1)
    out += alpha * (np.log1p(-p) if on_null else np.log(p)) - 2.0 * np.log(s0 + smu)
    out += np.log(p) + np.log1p(-p) + np.log(s0) + np.log(smu)
    return out


def _numeric_hessian(f, x0, h=1e-3):
    n = x0.size
    H = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            ei = np.zeros(n)
            ej = np.zeros(n)
            ei[i] = h
            ej[j] = h
            val = (f(x0 + ei + ej) - f(x0 + ei - ej) - f(x0 - ei + ej) + f(x0 - ei - ej)) / (4 * h * h)
            H[i, j] = H[j, i] = val
    return H


def estimate_mc(values, config: PriorConfig = PriorConfig(), seed=0) -> EstimationResult:
    """Posterior means of ``(p, sigma0_sq, sigma_mu_sq)`` by importance sampling.

    The proposal is a multivariate Student-t in ``(logit p, log sigma0_sq,
    log sigma_mu_sq)`` centred at the posterior mode (found from robust
    moment estimates) with the inverse Hessian there as scale, inflated by
    ``config.proposal_scale``.  Weights are posterior / proposal, normalized.

    Raises :class:`DegenerateWeightsError` if the effective sample size
    drops below 50.
    """
    x = np.asarray(values, dtype=float)
    if x.ndim != 1 or not np.all(np.isfinite(x)):
        raise ValueError("values must be a finite 1-d vector")
    if x.size < 100:
        warnings.warn("fewer than 100 observations; estimates will be unstable", stacklevel=2)
    alpha = config.prior_exponent_alpha
    on_null = config.prior_target == "null"
    notes = []
    if abs(x.mean()) > 3 * x.std() / math.sqrt(x.size):
        notes.append("data do not look centered; de-mean before estimating")

    def neg_lp(eta):
        return -float(_log_posterior_free(eta, x, alpha, on_null)[0])

    start = _to_free(*_robust_start(x))
    fit = optimize.minimize(neg_lp, start, method="Nelder-Mead",
                            options={"xatol": 1e-6, "fatol": 1e-8, "maxiter": 4000})
    fit = optimize.minimize(neg_lp, fit.x, method="BFGS")
    mode = fit.x
    H = _numeric_hessian(neg_lp, mode)
    try:
        cov = np.linalg.inv(H)
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        notes.append("posterior curvature not positive definite at mode; using diagonal fallback")
        cov = np.diag(1.0 / np.maximum(np.abs(np.diag(H)), 1e-8))
    proposal = stats.multivariate_t(loc=mode, shape=cov * config.proposal_scale ** 2,
                                    df=config.proposal_df)
    rng = generator(seed_record(seed, IMPORTANCE))
    draws = proposal.rvs(size=config.importance_samples, random_state=rng)
    draws = np.atleast_2d(draws)
    log_w = _log_posterior_free(draws, x, alpha, on_null) - proposal.logpdf(draws)
    log_w[~np.isfinite(log_w)] = -np.inf
    w = np.exp(log_w - logsumexp(log_w))
    ess = float(1.0 / np.sum(w * w))
    if not ess >= 50:
        raise DegenerateWeightsError(
            f"effective sample size {ess:.1f} < 50; increase importance_samples "
            "or widen the proposal (proposal_scale / proposal_df)"
        )
    p, s0, smu = _from_free(draws)
    means, sds, ses = {}, {}, {}
    for name, h in (("p", p), ("sigma0_sq", s0), ("sigma_mu_sq", smu)):
        mean = float(np.sum(w * h))
        means[name] = mean
        sds[name] = float(math.sqrt(max(np.sum(w * (h - mean) ** 2), 0.0)))
        ses[name] = float(math.sqrt(np.sum(w * w * (h - mean) ** 2)))
    params = MixtureParams(means["p"], means["sigma0_sq"], means["sigma_mu_sq"])
    log.debug("importance sampling: ess=%.1f of %d", ess, config.importance_samples)
    return EstimationResult(
        params, sds, ess, "importance-sampling", mc_se=ses,
        log_likelihood=log_likelihood(x, params), notes=notes,
    )


# -- EM --------------------------------------------------------------------

def _single_normal_loglik(x):
    v = float(np.mean(x * x))
    return -0.5 * x.size * (_LOG_2PI + math.log(v) + 1.0)


def _observed_info_sd(x, p, s0, smu):
    """Asymptotic SDs from the numerical Hessian of the log-likelihood."""
    theta = np.array([p, s0, smu])
    steps = np.maximum(np.abs(theta) * 1e-4, 1e-8)

    def ll(t):
        return float(np.sum(_loglik_terms(x, t[0], t[1], t[2])))

    n = 3
    H = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            ei = np.zeros(n)
            ej = np.zeros(n)
            ei[i] = steps[i]
            ej[j] = steps[j]
            H[i, j] = H[j, i] = (ll(theta + ei + ej) - ll(theta + ei - ej)
                                 - ll(theta - ei + ej) + ll(theta - ei - ej)) / (4 * steps[i] * steps[j])
    try:
        cov = np.linalg.inv(-H)
        sd = np.sqrt(np.diag(cov))
    except np.linalg.LinAlgError:
        sd = np.full(n, np.nan)
    if not np.all(np.isfinite(sd)):
        sd = np.full(n, np.inf)
    return dict(zip(("p", "sigma0_sq", "sigma_mu_sq"), map(float, sd)))


def estimate_em(values, tolerance: float = 1e-8, max_iters: int = 2000) -> EstimationResult:
    """Maximum likelihood for the zero-mean two-component scale mixture.

    M-step keeps the non-null variance at least as large as the null one
    (``sigma_mu_sq >= 0``); when the unconstrained update violates this the
    two variances are pooled.  The result is flagged ``degenerate`` when the
    fit collapses onto a boundary (``p`` near 0 or 1, ``sigma_mu_sq`` near 0)
    or the mixture does not beat a single normal.
    """
    x = np.asarray(values, dtype=float)
    if x.ndim != 1 or not np.all(np.isfinite(x)):
        raise ValueError("values must be a finite 1-d vector")
    if x.size < 100:
        warnings.warn("fewer than 100 observations; estimates will be unstable", stacklevel=2)
    xsq = x * x
    p, s0, smu = _robust_start(x)
    v0, v1 = s0, s0 + smu
    prev = float(np.sum(_loglik_terms(x, p, v0, v1 - v0)))
    it = 0
    for it in range(1, max_iters + 1):
        with np.errstate(divide="ignore"):
            a = math.log1p(-p) - 0.5 * (math.log(v0) + xsq / v0)
            b = math.log(p) - 0.5 * (math.log(v1) + xsq / v1)
        w = expit(b - a)
        sw = float(w.sum())
        p = min(max(sw / x.size, P_FLOOR), 1.0 - P_FLOOR)
        n0 = x.size - sw
        v0_new = float(np.sum((1.0 - w) * xsq)) / n0 if n0 > 0 else float(np.mean(xsq))
        v1_new = float(np.sum(w * xsq)) / sw if sw > 0 else v0_new
        if v1_new < v0_new:
            v0_new = v1_new = float(np.mean(xsq))
        v0, v1 = v0_new, v1_new
        cur = float(np.sum(_loglik_terms(x, p, v0, v1 - v0)))
        # EM ascent; allow rounding-level slack only
        assert cur >= prev - 1e-9 * max(1.0, abs(prev)), "EM decreased the log-likelihood"
        gain = cur - prev
        prev = cur
        if gain < tolerance:
            break
    smu = max(v1 - v0, 0.0)
    notes = []
    degenerate = False
    if p <= 1e-4 or p >= 1.0 - 1e-4:
        degenerate = True
        notes.append("non-null proportion collapsed to a boundary")
    if smu <= 1e-3 * v0:
        degenerate = True
        notes.append("signal variance collapsed to zero")
    lr = 2.0 * (prev - _single_normal_loglik(x))
    if lr < 10.0:
        degenerate = True
        notes.append(f"mixture barely improves on a single normal (2*dLL={lr:.2f})")
    params = MixtureParams(p, v0, smu)
    sds = _observed_info_sd(x, p, v0, smu) if not degenerate else {
        "p": math.inf, "sigma0_sq": math.inf, "sigma_mu_sq": math.inf}
    return EstimationResult(
        params, sds, float("nan"), "em", log_likelihood=prev, iterations=it,
        degenerate=degenerate, notes=notes,
    )
