"""Replicated Benjamini-Hochberg comparison procedures.

Both spend (about) the same total budget as the optimized design:

* one-stage: every compound gets ``ceil(B / (c1 m1))`` replicates, then BH
  on two-sided null p-values;
* two-stage: 10 replicates for every compound, compounds whose replicate
  mean is more than two null standard deviations from zero go on to a
  confirmatory screen with as many replicates as the remaining budget
  allows, then BH on the confirmatory p-values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rng as _rng
from .design import DesignInputs, InfeasibleBudgetError
from .fdr import (
    RejectionSet,
    bh_step_up,
    realized_fdp,
    true_positive_count,
    two_sided_p_value,
)
from .mixture import StageModel, simulate_screen, simulate_stage2_from_selection, stage2_params

SCREEN_RULES = ("theoretical", "empirical")


@dataclass(frozen=True)
class BaselineResult:
    method: str
    rejection: RejectionSet
    realized_fdp: float
    true_positives: int
    spend: float
    r1: int
    r2: int = 0
    carried: int = 0

    @property
    def hits(self) -> int:
        return self.rejection.threshold_rank


def one_stage_replicates(inputs: DesignInputs) -> int:
    per_pass = inputs.cost1_minor * inputs.m1
    return -(-inputs.budget_minor // per_pass)


def one_stage_bh(inputs: DesignInputs, seed, truth=None) -> BaselineResult:
    """Single screen with the whole budget spent on replicates (rounded up).

    ``truth`` (default ``inputs.stage1_params``) generates the data; the
    p-values always use ``inputs.stage1_params``.
    """
    truth = truth or inputs.stage1_params
    r1 = one_stage_replicates(inputs)
    screen = simulate_screen(StageModel(truth, r1), inputs.m1, _rng.seed_record(seed, _rng.BASELINE_ONE))
    pvals = two_sided_p_value(screen.values, inputs.stage1_params.sigma0_sq, r1)
    rejection = bh_step_up(pvals, inputs.fdr_alpha)
    return BaselineResult(
        "one-stage-bh", rejection,
        realized_fdp(rejection, screen.theta), true_positive_count(rejection, screen.theta),
        inputs.cost1_minor * r1 * inputs.m1 / 100, r1,
    )


def two_stage_bh(inputs: DesignInputs, seed, truth=None, stage1_reps: int = 10,
                 z_cut: float = 2.0, screen_rule: str = "theoretical") -> BaselineResult:
    """Fixed 10-replicate primary screen, |z| > 2 carry-forward, BH at stage II.

    ``screen_rule="theoretical"`` standardizes replicate means by the model
    null SD ``sqrt(sigma0_sq / r)``; ``"empirical"`` uses their sample SD.
    If more compounds pass than one confirmatory replicate each can pay for,
    only the most extreme affordable ones are carried.
    """
    if screen_rule not in SCREEN_RULES:
        raise ValueError(f"screen_rule must be one of {SCREEN_RULES}")
    truth = truth or inputs.stage1_params
    stage1_cost = inputs.cost1_minor * stage1_reps * inputs.m1
    left = inputs.budget_minor - stage1_cost
    if left <= 0:
        raise InfeasibleBudgetError(
            f"budget does not exceed the cost of {stage1_reps} primary replicates")
    rec1 = _rng.seed_record(seed, _rng.BASELINE_TWO, 1)
    screen = simulate_screen(StageModel(truth, stage1_reps), inputs.m1, rec1)
    params = inputs.stage1_params
    if screen_rule == "theoretical":
        scale = math.sqrt(params.sigma0_sq / stage1_reps)
    else:
        scale = float(np.std(screen.values, ddof=1))
    z = np.abs(screen.values) / scale
    carried = np.flatnonzero(z > z_cut)
    spend = stage1_cost / 100
    empty = BaselineResult("two-stage-bh", RejectionSet.empty(), 0.0, 0, spend, stage1_reps)
    if carried.size == 0:
        return empty
    affordable = left // inputs.cost2_minor
    if carried.size > affordable:
        top = np.argsort(-z[carried], kind="stable")[:affordable]
        carried = np.sort(carried[top])
    r2 = left // (inputs.cost2_minor * carried.size)
    params2 = stage2_params(params, inputs.precision_ratio)
    truth2 = stage2_params(truth, inputs.precision_ratio)
    theta = screen.theta[carried]
    signal = screen.signal[carried] if inputs.stage2_signal == "retain" else None
    confirm = simulate_stage2_from_selection(
        theta, StageModel(truth2, r2), _rng.seed_record(seed, _rng.BASELINE_TWO, 2), signal=signal)
    pvals = two_sided_p_value(confirm.values, params2.sigma0_sq, r2)
    local = bh_step_up(pvals, inputs.fdr_alpha)
    rejection = RejectionSet(carried[local.indices], local.threshold_rank)
    spend += inputs.cost2_minor * r2 * carried.size / 100
    return BaselineResult(
        "two-stage-bh", rejection,
        realized_fdp(rejection, screen.theta), true_positive_count(rejection, screen.theta),
        spend, stage1_reps, int(r2), int(carried.size),
    )
