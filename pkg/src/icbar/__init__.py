"""Penalized semiparametric transformation models for interval-censored
competing-risks data with possibly missing causes."""

from .data import SubjectRecord, build_jump_grid, load_dataset, write_companion, write_dataset
from .emcore import Problem, observed_loglik, profile_derivatives
from .errors import IcbarError, NumericalError, ValidationError
from .harness import BenchSettings, MetricsRow, load_config, replication_metrics, run_bench
from .kernels import BACKEND
from .penalty import ALASSO, BAR, LASSO, penalty_from_name
from .simgen import Scenario, bma_like_scenario, gen_dataset, table1_scenario
from .solver import (
    FitConfig,
    FitResult,
    fit_penalized,
    fit_unpenalized,
    gcv_score,
    initial_estimate,
    oracle_fit,
    select_tau,
    select_transformation,
)
from .transform import TransformationSpec, g, g_inverse, g_prime

__version__ = "0.1.0"

__all__ = [
    "ALASSO", "BACKEND", "BAR", "BenchSettings", "FitConfig", "FitResult", "IcbarError", "LASSO",
    "MetricsRow", "NumericalError", "Problem", "Scenario", "SubjectRecord", "TransformationSpec",
    "ValidationError", "bma_like_scenario", "build_jump_grid", "fit_penalized", "fit_unpenalized",
    "g", "g_inverse", "g_prime", "gcv_score", "gen_dataset", "initial_estimate", "load_config",
    "load_dataset", "observed_loglik", "oracle_fit", "penalty_from_name", "profile_derivatives",
    "replication_metrics", "run_bench", "select_tau", "select_transformation", "table1_scenario",
    "write_companion", "write_dataset",
]
