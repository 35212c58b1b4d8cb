"""Seeded study runners: the two simulation studies and the cost sweep.

Each study returns tidy records (one per grid point and method).  Every
random draw is keyed by ``(master seed, stream, grid index, repetition)``
so results do not depend on the number of workers.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from . import rng as _rng
from .baselines import one_stage_bh, two_stage_bh
from .design import DesignInputs, OptimizationResult, optimize, run_two_stage
from .estimation import demean, estimate_em
from .mixture import MixtureParams, StageModel, simulate_screen

STUDIES = ("sim1", "sim2", "data-sweep")
METHODS = ("proposed", "two-stage-bh", "one-stage-bh")

SIM_PARAMS = MixtureParams(p=0.10, sigma0_sq=1.0, sigma_mu_sq=6.25)
SCREEN_B_PARAMS = MixtureParams(p=0.0132, sigma0_sq=0.5677, sigma_mu_sq=3.0735, mean_shift=0.287)

SIM1_GRID = tuple(round(0.10 + 0.01 * i, 2) for i in range(11))
SIM2_GRID = (0.02, 0.05, 0.10, 0.15, 0.20, 0.25, 0.30)
SWEEP_GRID = (2.0, 5.0, 10.0, 50.0)


def sim_inputs(p: float = 0.10, fdr_alpha: float = 0.05, mc_reps: int = 100,
               sigma_mu_sq: float = 6.25) -> DesignInputs:
    """Simulation-study setting: 500 compounds, $250,000, $20 / $50.

    Confirmatory values are drawn afresh from the stage-II mixture
    (``stage2_signal="redraw"``): in the simulation studies both stages are
    generated from the mixture model itself.
    """
    return DesignInputs(
        m1=500, budget=250_000, cost1=20, cost2=50,
        stage1_params=MixtureParams(p, 1.0, sigma_mu_sq),
        precision_ratio=3.0, fdr_alpha=fdr_alpha, mc_reps=mc_reps,
        stage2_signal="redraw",
    )


def sweep_inputs(cost2: float = 2.0, mc_reps: int = 100, a1_stride: int = 100,
                 params: MixtureParams = SCREEN_B_PARAMS) -> DesignInputs:
    """Real-data setting: 51,840 compounds, $500,000, $1 per primary replicate.

    Carried compounds keep their effects at the confirmatory stage.
    """
    return DesignInputs(
        m1=51_840, budget=500_000, cost1=1, cost2=cost2, stage1_params=params,
        precision_ratio=3.0, fdr_alpha=0.05, mc_reps=mc_reps, a1_stride=a1_stride,
    )


@dataclass(frozen=True)
class StudyConfig:
    study_id: str
    parameter_grid: tuple
    base_inputs: DesignInputs
    repetitions: int = 200
    seed: int = 0
    workers: int = 1
    # re-estimate parameters from a simulated pilot screen in every repetition
    estimate_params: bool = False

    def __post_init__(self):
        if self.study_id not in STUDIES:
            raise ValueError(f"study_id must be one of {STUDIES}")
        if len(self.parameter_grid) == 0:
            raise ValueError("parameter grid must be nonempty")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")


@dataclass
class MetricRecord:
    grid_point: float
    method: str
    mean_realized_fdr: float
    mc_se: float
    mean_etp: float
    etp_se: float
    ln_etp: Optional[float]
    etp_absent: bool
    repetitions: int
    r1: Optional[int] = None
    a1_size: Optional[int] = None
    r2: Optional[int] = None

    def as_row(self) -> dict:
        return asdict(self)


def _record(grid_point, method, fdps, tps, design=(None, None, None)):
    fdps = np.asarray(fdps, dtype=float)
    tps = np.asarray(tps, dtype=float)
    n = fdps.size
    se = (lambda a: float(a.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0)
    etp = float(tps.mean())
    return MetricRecord(
        grid_point=float(grid_point), method=method,
        mean_realized_fdr=float(fdps.mean()), mc_se=se(fdps),
        mean_etp=etp, etp_se=se(tps),
        ln_etp=math.log(etp) if etp > 0 else None, etp_absent=not etp > 0,
        repetitions=n, r1=design[0], a1_size=design[1], r2=design[2],
    )


def grid_inputs(config: StudyConfig, value) -> DesignInputs:
    if config.study_id == "sim1":
        return replace(config.base_inputs, stage1_params=config.base_inputs.stage1_params.with_p(value))
    if config.study_id == "sim2":
        return replace(config.base_inputs, fdr_alpha=value)
    return replace(config.base_inputs, cost2=value)


def _pilot_params(inputs: DesignInputs, seed) -> MixtureParams:
    """Estimate parameters from one simulated single-replicate pilot screen."""
    pilot = simulate_screen(StageModel(inputs.stage1_params, 1), inputs.m1, seed)
    x, shift = demean(pilot.values)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        est = estimate_em(x)
    p = est.params
    return MixtureParams(p.p, p.sigma0_sq, p.sigma_mu_sq, shift)


def _grid_point_job(args):
    config, gi, value = args
    inputs = grid_inputs(config, value)
    truth = inputs.stage1_params
    prop_fdp, prop_tp, two_fdp, two_tp, one_fdp, one_tp = ([] for _ in range(6))
    design = None
    if not config.estimate_params:
        design = optimize(inputs, _rng.seed_record(config.seed, gi)).best.candidate
    for rep in range(config.repetitions):
        run_inputs = inputs
        cand = design
        if config.estimate_params:
            est = _pilot_params(inputs, _rng.seed_record(config.seed, _rng.PILOT, gi, rep))
            run_inputs = replace(inputs, stage1_params=est)
            cand = optimize(run_inputs, _rng.seed_record(config.seed, gi, rep)).best.candidate
        out = run_two_stage(run_inputs, cand,
                            _rng.seed_record(config.seed, _rng.EXPERIMENT, gi, rep), truth=truth)
        prop_fdp.append(out.realized_fdp)
        prop_tp.append(out.true_positives)
        b2 = two_stage_bh(run_inputs, _rng.seed_record(config.seed, gi, rep), truth=truth)
        two_fdp.append(b2.realized_fdp)
        two_tp.append(b2.true_positives)
        b1 = one_stage_bh(run_inputs, _rng.seed_record(config.seed, gi, rep), truth=truth)
        one_fdp.append(b1.realized_fdp)
        one_tp.append(b1.true_positives)
    d = (design.r1, design.a1_size, design.r2) if design else (None, None, None)
    return [
        _record(value, "proposed", prop_fdp, prop_tp, d),
        _record(value, "two-stage-bh", two_fdp, two_tp, (10, None, None)),
        _record(value, "one-stage-bh", one_fdp, one_tp, (b1.r1, None, None)),
    ]


def _run_sim(config: StudyConfig, expected: str) -> list:
    if config.study_id != expected:
        raise ValueError(f"expected a {expected} config, got {config.study_id}")
    jobs = [(config, gi, v) for gi, v in enumerate(config.parameter_grid)]
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            rows = list(pool.map(_grid_point_job, jobs))
    else:
        rows = [_grid_point_job(j) for j in jobs]
    return [r for row in rows for r in row]


def run_sim1(config: StudyConfig) -> list:
    """Realized FDR and ETP of all three methods over a grid of non-null proportions."""
    return _run_sim(config, "sim1")


def run_sim2(config: StudyConfig) -> list:
    """Realized FDR and ETP of all three methods over a grid of FDR levels."""
    return _run_sim(config, "sim2")


@dataclass
class SweepPoint:
    cost2: float
    result: OptimizationResult
    a1_stride: int = field(default=1)


def run_data_sweep(config: StudyConfig) -> list:
    """One full design optimization per stage-II cost."""
    if config.study_id != "data-sweep":
        raise ValueError(f"expected a data-sweep config, got {config.study_id}")
    out = []
    for gi, c2 in enumerate(config.parameter_grid):
        inputs = grid_inputs(config, c2)
        res = optimize(inputs, _rng.seed_record(config.seed, gi), workers=config.workers)
        out.append(SweepPoint(float(c2), res, inputs.a1_stride))
    return out


def fdr_slope(records, method: str = "proposed") -> float:
    """Least-squares slope of realized FDR on the nominal level (sim2)."""
    pts = [(r.grid_point, r.mean_realized_fdr) for r in records if r.method == method]
    x, y = np.array(pts).T
    return float(np.polyfit(x, y, 1)[0])
