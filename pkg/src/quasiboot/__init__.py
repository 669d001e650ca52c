"""Fractional-response logistic regression with bootstrap-t inference."""

__version__ = "0.1.0"

from .bootstrap import (
    BootstrapConfig,
    BootstrapOutput,
    InferenceReport,
    confidence_interval,
    p_value,
    quantile,
    run_bootstrap,
    summarize,
    t_statistics,
)
from .estimator import QuasiLogitRegressor
from .exceptions import (
    BootstrapAbortError,
    ContractError,
    FitError,
    FormulaError,
    IngestError,
    NonConvergenceError,
    SeparationError,
    SingularDesignError,
)
from .formula import parse_formula
from .glmm import FitResult, RandomEffectEstimate, fit, fit_fixed, fit_mixed
from .interpret import (
    endpoint_high_approx,
    endpoint_low_approx,
    marginal_derivative,
    ratio_update,
)
from .io import ingest_csv, render
from .model_core import (
    GroupingFactor,
    ModelSpec,
    ObservationTable,
    logistic,
    quasi_gradient,
    quasi_log_likelihood,
)
from .resample import (
    ResamplePlan,
    block_resample,
    pigeonhole_resample,
    select_bootstrap_factor,
)
from .simulate import SimConfig, evaluate_cell, generate_dataset, run_oracle

__all__ = [
    "BootstrapAbortError", "BootstrapConfig", "BootstrapOutput", "ContractError",
    "FitError", "FitResult", "FormulaError", "GroupingFactor", "IngestError",
    "InferenceReport", "ModelSpec", "NonConvergenceError", "ObservationTable",
    "QuasiLogitRegressor", "RandomEffectEstimate", "ResamplePlan", "SeparationError",
    "SimConfig", "SingularDesignError", "block_resample", "confidence_interval",
    "endpoint_high_approx", "endpoint_low_approx", "evaluate_cell", "fit", "fit_fixed",
    "fit_mixed", "generate_dataset", "ingest_csv", "logistic", "marginal_derivative",
    "p_value", "parse_formula", "pigeonhole_resample", "quantile", "quasi_gradient",
    "quasi_log_likelihood", "ratio_update", "render", "run_bootstrap", "run_oracle",
    "select_bootstrap_factor", "summarize", "t_statistics",
]
