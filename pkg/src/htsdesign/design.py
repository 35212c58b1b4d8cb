"""Budget-constrained grid search for two-stage screening designs.

For every feasible pair ``(r1, a1_size)`` the two-stage screen is simulated
``mc_reps`` times: a primary screen of ``m1`` compounds with ``r1``
replicates, ranking by Lfdr, carrying the top ``a1_size`` compounds (with
their latent states) into a confirmatory screen with ``r2`` replicates, and
applying the Lfdr step-up at the target level.  The design with the largest
mean number of confirmed hits wins.

By default a carried compound keeps its true effect and the confirmatory
screen only adds fresh, more precise noise (``stage2_signal="retain"``);
``"redraw"`` draws a new effect from the signal distribution instead.

All candidates sharing an ``r1`` reuse the same primary screens and the
same confirmatory noise draws in each replicate (common random numbers).
Each candidate still sees correctly distributed data; sharing the draws makes the comparison between neighbouring
``a1_size`` values far less noisy and lets one primary screen serve the
whole row of the grid.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.special import expit

from . import rng as _rng
from .fdr import lfdr_step_up, lfdr_statistic
from .mixture import (
    MixtureParams,
    StageModel,
    nonnull_log_odds,
    simulate_screen,
    fresh_signal,
    simulate_stage2_from_selection,
    stage2_params,
)

STAGE2_P_MODES = ("realized", "inherit", "posterior")
STAGE2_SIGNAL_MODES = ("retain", "redraw")


class InfeasibleBudgetError(ValueError):
    """The budget cannot pay for a full primary screen plus one follow-up."""


def to_minor(amount) -> int:
    """Currency amount as an integer number of cents."""
    cents = round(float(amount) * 100)
    if not math.isfinite(float(amount)) or abs(cents - float(amount) * 100) > 1e-6 * max(1, abs(cents)):
        raise ValueError(f"currency amount {amount!r} is not representable in whole cents")
    return int(cents)


@dataclass(frozen=True)
class DesignInputs:
    m1: int
    budget: float
    cost1: float
    cost2: float
    stage1_params: MixtureParams
    precision_ratio: float = 1.0
    fdr_alpha: float = 0.05
    mc_reps: int = 100
    a1_stride: int = 1
    r1_max_override: Optional[int] = None
    stage2_p: str = "realized"
    stage2_signal: str = "retain"

    def __post_init__(self):
        if int(self.m1) != self.m1 or self.m1 < 1:
            raise ValueError("m1 must be a positive integer")
        if to_minor(self.cost1) <= 0 or to_minor(self.cost2) <= 0:
            raise ValueError("costs must be positive")
        if self.precision_ratio < 1:
            raise ValueError("precision_ratio must be >= 1")
        if not 0.0 < self.fdr_alpha < 1.0:
            raise ValueError("fdr_alpha must lie in (0, 1)")
        if self.mc_reps < 1:
            raise ValueError("mc_reps must be >= 1")
        if self.a1_stride < 1:
            raise ValueError("a1_stride must be >= 1")
        if self.r1_max_override is not None and self.r1_max_override < 1:
            raise ValueError("r1_max_override must be >= 1")
        if self.stage2_p not in STAGE2_P_MODES:
            raise ValueError(f"stage2_p must be one of {STAGE2_P_MODES}")
        if self.stage2_signal not in STAGE2_SIGNAL_MODES:
            raise ValueError(f"stage2_signal must be one of {STAGE2_SIGNAL_MODES}")
        if self.budget_minor < self.cost1_minor * self.m1 + self.cost2_minor:
            raise InfeasibleBudgetError(
                "budget must cover one primary replicate of every compound "
                "and one confirmatory replicate"
            )

    @property
    def budget_minor(self) -> int:
        return to_minor(self.budget)

    @property
    def cost1_minor(self) -> int:
        return to_minor(self.cost1)

    @property
    def cost2_minor(self) -> int:
        return to_minor(self.cost2)

    @property
    def stage2(self) -> MixtureParams:
        return stage2_params(self.stage1_params, self.precision_ratio)


@dataclass(frozen=True)
class DesignCandidate:
    r1: int
    a1_size: int
    r2: int

    def spend(self, inputs: DesignInputs) -> float:
        cents = inputs.cost1_minor * self.r1 * inputs.m1 + inputs.cost2_minor * self.r2 * self.a1_size
        return cents / 100


@dataclass(frozen=True)
class CandidateEvaluation:
    candidate: DesignCandidate
    expected_hits: float
    expected_true_positives: float
    mean_realized_fdp: float
    hits_se: float
    true_positives_se: float
    fdp_se: float

    def as_row(self) -> dict:
        return {
            "r1": self.candidate.r1,
            "a1_size": self.candidate.a1_size,
            "r2": self.candidate.r2,
            "expected_hits": self.expected_hits,
            "expected_true_positives": self.expected_true_positives,
            "mean_realized_fdp": self.mean_realized_fdp,
            "hits_se": self.hits_se,
            "true_positives_se": self.true_positives_se,
            "fdp_se": self.fdp_se,
        }


@dataclass
class OptimizationResult:
    best: CandidateEvaluation
    frontier: list = field(default_factory=list)


def stage2_replicates(inputs: DesignInputs, r1: int, a1_size: int) -> int:
    """``floor((B - c1 r1 m1) / (c2 a1_size))``; 0 means infeasible."""
    left = inputs.budget_minor - inputs.cost1_minor * r1 * inputs.m1
    if left <= 0 or a1_size < 1:
        return 0
    return left // (inputs.cost2_minor * a1_size)


def r1_upper(inputs: DesignInputs) -> int:
    if inputs.r1_max_override is not None:
        return int(inputs.r1_max_override)
    return inputs.budget_minor // (inputs.cost1_minor * inputs.m1)


def a1_upper(inputs: DesignInputs, r1: int) -> int:
    left = inputs.budget_minor - inputs.cost1_minor * r1 * inputs.m1
    if left <= 0:
        return 0
    return min(left // inputs.cost2_minor, inputs.m1)


def a1_grid(inputs: DesignInputs, r1: int) -> list:
    return list(range(1, a1_upper(inputs, r1) + 1, inputs.a1_stride))


def enumerate_candidates(inputs: DesignInputs) -> list:
    """All feasible candidates in ``(r1, a1_size)`` order."""
    out = []
    for r1 in range(1, r1_upper(inputs) + 1):
        for a1 in a1_grid(inputs, r1):
            r2 = stage2_replicates(inputs, r1, a1)
            if r2 >= 1:
                out.append(DesignCandidate(r1, a1, r2))
    if not out:
        raise InfeasibleBudgetError("no feasible design under this budget")
    return out


def _stage2_proportion(mode, theta_sorted, lfdr1_sorted, p1):
    """Non-null proportion entering the confirmatory Lfdr, per prefix size.

    Returns ``f(a1) -> p2``.  ``realized`` uses the simulated states of the
    carried compounds, ``posterior`` their mean posterior non-null
    probability from the primary screen, ``inherit`` the library-wide value.
    """
    if mode == "inherit":
        return lambda a1: p1
    if mode == "realized":
        cum = np.cumsum(theta_sorted, dtype=np.int64)
    else:
        cum = np.cumsum(1.0 - lfdr1_sorted)
    return lambda a1: min(max(float(cum[a1 - 1]) / a1, 0.0), 1.0)


def _confirm(xsq, theta, v0, v1, p2, alpha):
    """Step-up rank and true positives for one confirmatory screen.

    ``xsq`` are the squared stage-II replicate means.  Lfdr is decreasing
    in ``x^2``, so only compounds with Lfdr below 1/2 are sorted first; the
    full set is sorted only when the step-up could run past them.
    """
    n = xsq.size
    if p2 <= 0.0:
        return 0, 0
    logit = math.log(p2) - math.log1p(-p2) if p2 < 1.0 else math.inf
    intercept = logit + 0.5 * math.log(v0 / v1)
    slope = 0.5 * (1.0 / v0 - 1.0 / v1)
    if slope > 0 and math.isfinite(intercept):
        # log-odds > 0  <=>  x^2 > -intercept / slope
        keep = np.flatnonzero(xsq > -intercept / slope)
        k, tp, total = _step_up_subset(xsq, theta, keep, intercept, slope, alpha)
        if k < keep.size or keep.size == n or (total + 0.5) / (keep.size + 1) > alpha:
            return k, tp
    k, tp, _ = _step_up_subset(xsq, theta, np.arange(n), intercept, slope, alpha)
    return k, tp


def _step_up_subset(xsq, theta, keep, intercept, slope, alpha):
    if keep.size == 0:
        return 0, 0, 0.0
    th = theta[keep]
    lfdr = expit(-(intercept + slope * xsq[keep]))
    order = np.argsort(lfdr, kind="stable")
    csum = np.cumsum(lfdr[order])
    below = np.flatnonzero(csum <= alpha * np.arange(1, keep.size + 1))
    k = int(below[-1]) + 1 if below.size else 0
    tp = int(th[order[:k]].sum())
    return k, tp, float(csum[-1])


def simulate_r1_row(inputs: DesignInputs, r1: int, a1_sizes, seed, stage2_rule=stage2_params):
    """Monte Carlo hits, true positives and FDP for one ``r1`` row.

    Replicate ``rep`` draws its primary screen from substream
    ``(seed, STAGE1, r1, rep)`` and its confirmatory screen from
    ``(seed, STAGE2, r1, rep)``; every ``a1_size`` in the row shares them.
    Returns three ``(mc_reps, len(a1_sizes))`` arrays.
    """
    a1_sizes = [int(a) for a in a1_sizes]
    params1 = inputs.stage1_params
    params2 = stage2_rule(params1, inputs.precision_ratio)
    model1 = StageModel(params1, r1)
    r2s = [stage2_replicates(inputs, r1, a) for a in a1_sizes]
    if any(r2 < 1 for r2 in r2s):
        raise ValueError(f"infeasible candidate in row r1={r1}")
    n_a = len(a1_sizes)
    hits = np.zeros((inputs.mc_reps, n_a))
    tps = np.zeros((inputs.mc_reps, n_a))
    fdps = np.zeros((inputs.mc_reps, n_a))
    for rep in range(inputs.mc_reps):
        screen = simulate_screen(model1, inputs.m1, _rng.seed_record(seed, _rng.STAGE1, r1, rep))
        log_odds = nonnull_log_odds(screen.values, model1)
        order = np.argsort(-log_odds, kind="stable")
        theta_sorted = screen.theta[order]
        lfdr1_sorted = expit(-log_odds[order])
        rec2 = _rng.seed_record(seed, _rng.STAGE2, r1, rep)
        noise = _rng.generator(_rng.seed_record(rec2, 0)).standard_normal(inputs.m1)
        if inputs.stage2_signal == "retain":
            signal = screen.signal[order]
        else:
            signal = fresh_signal(theta_sorted, params2.sigma_mu_sq, rec2, inputs.m1)
        prop = _stage2_proportion(inputs.stage2_p, theta_sorted, lfdr1_sorted, params1.p)
        for j, (a1, r2) in enumerate(zip(a1_sizes, r2s)):
            v0 = params2.sigma0_sq / r2
            v1 = params2.sigma_mu_sq + v0
            x = signal[:a1] + noise[:a1] * math.sqrt(v0)
            k, tp = _confirm(x * x, theta_sorted[:a1], v0, v1, prop(a1), inputs.fdr_alpha)
            hits[rep, j] = k
            tps[rep, j] = tp
            fdps[rep, j] = (k - tp) / k if k else 0.0
    return hits, tps, fdps


def _se(a, axis=0):
    n = a.shape[axis]
    if n < 2:
        return np.zeros(a.shape[1 - axis])
    return a.std(axis=axis, ddof=1) / math.sqrt(n)


def _summarize(r1, a1_sizes, r2s, hits, tps, fdps):
    out = []
    h_m, t_m, f_m = hits.mean(0), tps.mean(0), fdps.mean(0)
    h_s, t_s, f_s = _se(hits), _se(tps), _se(fdps)
    for j, (a1, r2) in enumerate(zip(a1_sizes, r2s)):
        out.append(CandidateEvaluation(
            DesignCandidate(r1, a1, r2),
            float(h_m[j]), float(t_m[j]), float(f_m[j]),
            float(h_s[j]), float(t_s[j]), float(f_s[j]),
        ))
    return out


def evaluate_candidate(candidate: DesignCandidate, inputs: DesignInputs, seed,
                       stage2_rule=stage2_params) -> CandidateEvaluation:
    """Monte Carlo means (and standard errors) for a single design.

    Uses the same substreams as :func:`optimize`, so the result equals the
    matching frontier entry exactly.
    """
    r2 = stage2_replicates(inputs, candidate.r1, candidate.a1_size)
    if r2 < 1 or candidate.a1_size > inputs.m1 or r2 != candidate.r2:
        raise ValueError(f"candidate {candidate} is not feasible for these inputs")
    hits, tps, fdps = simulate_r1_row(inputs, candidate.r1, [candidate.a1_size], seed, stage2_rule)
    return _summarize(candidate.r1, [candidate.a1_size], [r2], hits, tps, fdps)[0]


def _row_job(args):
    inputs, r1, a1_sizes, seed, stage2_rule = args
    hits, tps, fdps = simulate_r1_row(inputs, r1, a1_sizes, seed, stage2_rule)
    r2s = [stage2_replicates(inputs, r1, a) for a in a1_sizes]
    return _summarize(r1, a1_sizes, r2s, hits, tps, fdps)


def optimize(inputs: DesignInputs, seed, stage2_rule: Callable = stage2_params,
             workers: int = 1) -> OptimizationResult:
    """Evaluate every feasible design and return the one with most expected hits.

    Ties go to the smaller ``r1``, then the smaller ``a1_size``.  The
    frontier holds every evaluation in ``(r1, a1_size)`` order and does not
    depend on ``workers``.
    """
    candidates = enumerate_candidates(inputs)
    rows = {}
    for c in candidates:
        rows.setdefault(c.r1, []).append(c.a1_size)
    jobs = [(inputs, r1, a1s, seed, stage2_rule) for r1, a1s in sorted(rows.items())]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_row_job, jobs))
    else:
        results = [_row_job(j) for j in jobs]
    frontier = [ev for row in results for ev in row]
    best = frontier[0]
    for ev in frontier[1:]:
        if ev.expected_hits > best.expected_hits:
            best = ev
    return OptimizationResult(best, frontier)


@dataclass(frozen=True)
class TwoStageOutcome:
    candidate: DesignCandidate
    selected: np.ndarray
    stage2_theta: np.ndarray
    rejected: np.ndarray
    hits: int
    true_positives: int
    realized_fdp: float
    spend: float


def run_two_stage(inputs: DesignInputs, candidate: DesignCandidate, seed,
                  stage2_p: str = "posterior", truth: Optional[MixtureParams] = None,
                  stage2_rule=stage2_params) -> TwoStageOutcome:
    """Carry out one two-stage screen with a fixed design.

    ``truth`` (default ``inputs.stage1_params``) generates the data while the
    Lfdr statistics use ``inputs.stage1_params``.  An analyst running the
    screen does not know the latent states, so by default the confirmatory
    Lfdr uses the mean posterior non-null probability of the carried
    compounds.
    """
    if stage2_p not in STAGE2_P_MODES:
        raise ValueError(f"stage2_p must be one of {STAGE2_P_MODES}")
    params1 = inputs.stage1_params
    truth = truth or params1
    model1 = StageModel(params1, candidate.r1)
    screen = simulate_screen(StageModel(truth, candidate.r1), inputs.m1,
                             _rng.seed_record(seed, _rng.STAGE1))
    lfdr1 = lfdr_statistic(screen.values, model1)
    order = np.argsort(-nonnull_log_odds(screen.values, model1), kind="stable")
    selected = order[:candidate.a1_size]
    theta_sel = screen.theta[selected]
    if stage2_p == "realized":
        p2 = float(theta_sel.mean())
    elif stage2_p == "posterior":
        p2 = float(np.clip(np.mean(1.0 - lfdr1[selected]), 0.0, 1.0))
    else:
        p2 = params1.p
    analysis2 = StageModel(stage2_rule(params1, inputs.precision_ratio).with_p(p2), candidate.r2)
    truth2 = StageModel(stage2_rule(truth, inputs.precision_ratio), candidate.r2)
    signal = screen.signal[selected] if inputs.stage2_signal == "retain" else None
    confirm = simulate_stage2_from_selection(
        theta_sel, truth2, _rng.seed_record(seed, _rng.STAGE2), signal=signal)
    rejection = lfdr_step_up(lfdr_statistic(confirm.values, analysis2), inputs.fdr_alpha)
    k = rejection.threshold_rank
    tp = int(theta_sel[rejection.indices].sum())
    return TwoStageOutcome(
        candidate, selected, theta_sel, selected[rejection.indices], k, tp,
        (k - tp) / k if k else 0.0, candidate.spend(inputs),
    )


def with_overrides(inputs: DesignInputs, **changes) -> DesignInputs:
    return replace(inputs, **changes)
