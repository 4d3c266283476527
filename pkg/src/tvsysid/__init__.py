"""Online Bayesian identification of time-varying linear systems.

Kernel-regularized FIR estimation updated in real time: sufficient
statistics with exponential forgetting, one-gradient-step empirical-Bayes
hyper-parameter updates (optionally estimating the forgetting factor
itself), offline reference optimizers, an RLS baseline, and a Monte-Carlo
benchmark reproducing a system-switch tracking experiment.
"""

from .bench import ExperimentConfig, run_experiment
from .estimators import EstimatorState, RlsState, posterior_mean
from .exceptions import InsufficientDataError, NumericalError, UndefinedMetricError
from .kernel import HyperBox, HyperParams, KernelFactor, project_box, tc_kernel
from .likelihood import MlEvaluation, eval_f, eval_grad_eta, eval_grad_gamma, ls_sigma2
from .metrics import FitTrace, RunRecord, aggregate, fit
from .simulator import (
    LtiSystem,
    ScenarioData,
    bandlimited_input,
    load_scenario,
    make_scenario,
    perturb_system,
    random_system,
    save_scenario,
)
from .stats import (
    RegressorBlock,
    SufficientStats,
    build_block,
    empty_stats,
    update_unweighted,
    update_weighted,
    weighted_stats_derivative,
)

__version__ = "0.1.0"

__all__ = [
    "ExperimentConfig",
    "run_experiment",
    "EstimatorState",
    "RlsState",
    "posterior_mean",
    "InsufficientDataError",
    "NumericalError",
    "UndefinedMetricError",
    "HyperBox",
    "HyperParams",
    "KernelFactor",
    "project_box",
    "tc_kernel",
    "MlEvaluation",
    "eval_f",
    "eval_grad_eta",
    "eval_grad_gamma",
    "ls_sigma2",
    "FitTrace",
    "RunRecord",
    "aggregate",
    "fit",
    "LtiSystem",
    "ScenarioData",
    "bandlimited_input",
    "load_scenario",
    "make_scenario",
    "perturb_system",
    "random_system",
    "save_scenario",
    "RegressorBlock",
    "SufficientStats",
    "build_block",
    "empty_stats",
    "update_unweighted",
    "update_weighted",
    "weighted_stats_derivative",
]
