"""Regularized linear models of lifted dynamics from snapshot data.

Fits finite-dimensional linear approximations of nonlinear dynamics by
solving the lifted regression problem as a semidefinite program, with
modular regularizers (ridge, matrix two-norm, nuclear norm, worst-case
system gain) and an asymptotic stability constraint, plus independent
verification tools for the fitted models.
"""

from .analysis import (
    KoopmanModel,
    PredictionResult,
    hinf_norm,
    load_model,
    predict,
    save_model,
    score,
    spectral_radius,
)
from .bilinear import (
    AlternationConfig,
    AlternationTrace,
    evaluate_objective,
    solve_hinf,
    solve_stability,
)
from .edmd import (
    EdmdMatrices,
    RegularizedGram,
    compute_gram,
    factor_L,
    solve_pinv,
    solve_tikhonov,
)
from .exceptions import (
    ConfigError,
    EmptyDatasetError,
    FormulationError,
    InvalidDataError,
    InvalidParameterError,
    KoopmanLmiError,
    NotPositiveDefiniteError,
    NotPositiveSemidefiniteError,
    NumericalError,
    UnboundedNormError,
)
from .lifting import (
    LiftedMatrices,
    LiftingSpec,
    SnapshotDataset,
    build_snapshots,
    lift_pair,
    lift_state,
    load_episode_csv,
    retract_state,
    save_episode_csv,
)
from .sdp import (
    RegularizerSpec,
    SdpProblem,
    SdpSolution,
    add_hinf_step_P,
    add_hinf_step_U,
    add_nuclear,
    add_stability_step_P,
    add_stability_step_U,
    add_two_norm,
    format_problem,
    formulate_base,
    formulate_base_inverted,
    solve,
)

__version__ = "0.1.0"

__all__ = [
    "AlternationConfig",
    "AlternationTrace",
    "ConfigError",
    "EdmdMatrices",
    "EmptyDatasetError",
    "FormulationError",
    "InvalidDataError",
    "InvalidParameterError",
    "KoopmanLmiError",
    "KoopmanModel",
    "LiftedMatrices",
    "LiftingSpec",
    "NotPositiveDefiniteError",
    "NotPositiveSemidefiniteError",
    "NumericalError",
    "PredictionResult",
    "RegularizedGram",
    "RegularizerSpec",
    "SdpProblem",
    "SdpSolution",
    "SnapshotDataset",
    "UnboundedNormError",
    "add_hinf_step_P",
    "add_hinf_step_U",
    "add_nuclear",
    "add_stability_step_P",
    "add_stability_step_U",
    "add_two_norm",
    "build_snapshots",
    "compute_gram",
    "evaluate_objective",
    "factor_L",
    "format_problem",
    "formulate_base",
    "formulate_base_inverted",
    "hinf_norm",
    "lift_pair",
    "lift_state",
    "load_episode_csv",
    "load_model",
    "predict",
    "retract_state",
    "save_episode_csv",
    "save_model",
    "score",
    "solve",
    "solve_hinf",
    "solve_pinv",
    "solve_stability",
    "solve_tikhonov",
    "spectral_radius",
]
