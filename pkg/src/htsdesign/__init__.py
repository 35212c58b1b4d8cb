"""Budget-constrained two-stage screening designs with local-FDR hit selection."""

__version__ = "0.1.0"

from .mixture import MixtureParams, StageModel, simulate_screen
from .fdr import bh_step_up, lfdr_statistic, lfdr_step_up
from .design import DesignInputs, InfeasibleBudgetError, optimize, run_two_stage
from .estimation import estimate_em, estimate_mc

__all__ = [
    "MixtureParams", "StageModel", "simulate_screen",
    "bh_step_up", "lfdr_statistic", "lfdr_step_up",
    "DesignInputs", "InfeasibleBudgetError", "optimize", "run_two_stage",
    "estimate_em", "estimate_mc",
]
