"""Multi-index and multilevel Monte Carlo estimation of a Zakai SPDE loss.

The package solves the 1-D parabolic SPDE

    dv = -mu v_x dt + (1/2) v_xx dt - sqrt(rho) v_x dM_t

with implicit Milstein finite differences and estimates E[L] for the loss
functional L = 1 - integral of the terminal density over x > 0, using coupled
mixed differences over independent space/time refinement levels.
"""

from .analysis import (
    ThetaResult,
    amplification_mean_square,
    compute_theta,
    one_step_factor,
    stability_check,
    verify_k0_condition,
)
from .config import ExperimentConfig
from .coupling import (
    BaseMesh,
    BrownianPath,
    CoupledIncrement,
    LevelPair,
    sample_first_difference,
    sample_mixed_difference,
    telescoping_check,
)
from .errors import (
    BudgetExceeded,
    ConfigError,
    DomainMisaligned,
    InvalidAccuracy,
    InvalidLevel,
    MissingPilot,
    NoConvergence,
    SolverFailure,
    StabilityViolation,
    ZakaiMimcError,
)
from .estimators import (
    EstimateReport,
    EstimatorPlan,
    IndexSet,
    LevelStats,
    MimcEstimator,
    MlmcEstimator,
    allocate_samples,
    build_triangular_index_set,
    build_union_index_set,
    choose_k0_and_caps,
    choose_l_star,
    merge_stats,
    optimize_alpha,
    run_mimc,
    run_mlmc,
)
from .spde import (
    DensityState,
    Functional,
    GridSpec,
    ModelParams,
    Scheme,
    TridiagonalOperator,
    build_grid,
    evolve,
    exact_loss_sample,
    expected_loss,
    initial_state,
    loss_rectangle,
    loss_trapezoidal,
    step_scheme_a,
    step_scheme_b,
)

__version__ = "0.1.0"

__all__ = [
    "ThetaResult",
    "amplification_mean_square",
    "compute_theta",
    "one_step_factor",
    "stability_check",
    "verify_k0_condition",
    "ExperimentConfig",
    "BaseMesh",
    "BrownianPath",
    "CoupledIncrement",
    "LevelPair",
    "sample_first_difference",
    "sample_mixed_difference",
    "telescoping_check",
    "BudgetExceeded",
    "ConfigError",
    "DomainMisaligned",
    "InvalidAccuracy",
    "InvalidLevel",
    "MissingPilot",
    "NoConvergence",
    "SolverFailure",
    "StabilityViolation",
    "ZakaiMimcError",
    "EstimateReport",
    "EstimatorPlan",
    "IndexSet",
    "LevelStats",
    "MimcEstimator",
    "MlmcEstimator",
    "allocate_samples",
    "build_triangular_index_set",
    "build_union_index_set",
    "choose_k0_and_caps",
    "choose_l_star",
    "merge_stats",
    "optimize_alpha",
    "run_mimc",
    "run_mlmc",
    "DensityState",
    "Functional",
    "GridSpec",
    "ModelParams",
    "Scheme",
    "TridiagonalOperator",
    "build_grid",
    "evolve",
    "exact_loss_sample",
    "expected_loss",
    "initial_state",
    "loss_rectangle",
    "loss_trapezoidal",
    "step_scheme_a",
    "step_scheme_b",
]
