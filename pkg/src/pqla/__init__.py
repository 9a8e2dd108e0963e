"""Penalized quasi-likelihood estimation for volatility parameters of SDEs."""

from .errors import (
    ConfigurationError,
    DataError,
    DomainError,
    EvaluationError,
    NonIdentifiableError,
    OptimizationError,
    PqlaError,
    SimulationError,
    StudyError,
)
from .optimizer import EstimationResult, McmcOptions, NewtonOptions, penalized_qmle, qbe, qmle
from .penalties import PenaltySpec, SupportPartition, penalized_objective, penalty_value, verify_conditions
from .quasi_likelihood import (
    QuadraticObjective,
    QuasiLikelihood,
    RateSpec,
    chi0_estimate,
    laq_decompose,
    limit_contrast,
    limit_information,
    quasi_hessian,
    quasi_loglik,
    quasi_score,
)
from .sde_core import (
    Dataset,
    ModelSpec,
    PathBundle,
    load_dataset,
    save_dataset,
    simulate_dataset,
    simulate_observation,
    simulate_paths,
)

from .experiments import ExperimentConfig, StudyReport, classify_selection, run_replication, run_study

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "DataError",
    "Dataset",
    "DomainError",
    "EstimationResult",
    "EvaluationError",
    "ExperimentConfig",
    "McmcOptions",
    "ModelSpec",
    "NewtonOptions",
    "NonIdentifiableError",
    "OptimizationError",
    "PathBundle",
    "PenaltySpec",
    "PqlaError",
    "QuadraticObjective",
    "QuasiLikelihood",
    "RateSpec",
    "SimulationError",
    "StudyError",
    "StudyReport",
    "SupportPartition",
    "chi0_estimate",
    "classify_selection",
    "laq_decompose",
    "limit_contrast",
    "limit_information",
    "load_dataset",
    "penalized_objective",
    "penalized_qmle",
    "penalty_value",
    "qbe",
    "qmle",
    "quasi_hessian",
    "quasi_loglik",
    "quasi_score",
    "run_replication",
    "run_study",
    "save_dataset",
    "simulate_dataset",
    "simulate_observation",
    "simulate_paths",
    "verify_conditions",
]
