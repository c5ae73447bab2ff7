"""Approximate constrained lumping of nonlinear ODE models.

Reduce a system x' = f(x) to y = Lx while preserving chosen linear
observables, either exactly or up to a tolerance, and quantify what the
tolerance costs along trajectories.
"""

from . import errors
from .jacobian import (
    RANK_RTOL,
    JacobianBasis,
    SamplingDomain,
    basis_from_matrices,
    basis_from_points,
    default_domain,
    membership_residual,
    sample_jacobian_basis,
)
from .lumping import (
    EpsilonSearchConfig,
    EpsilonSearchResult,
    LumpingMatrix,
    approximate_lump,
    deviation,
    epsilon_max,
    find_epsilon,
    orthonormalize_rows,
    staircase,
)
from .model import (
    DualVector,
    OdeSystem,
    evaluate_drift,
    evaluate_drift_dual,
    expression_to_text,
    parse_model,
)
from .simulate import (
    ReductionReport,
    SolverConfig,
    Trajectory,
    build_reduced_drift,
    error_bound_constant,
    estimate_lipschitz,
    integrate,
    reduction_report,
    write_series_csv,
)

__version__ = "0.1.0"

__all__ = [
    "errors",
    "RANK_RTOL",
    "JacobianBasis",
    "SamplingDomain",
    "basis_from_matrices",
    "basis_from_points",
    "default_domain",
    "membership_residual",
    "sample_jacobian_basis",
    "EpsilonSearchConfig",
    "EpsilonSearchResult",
    "LumpingMatrix",
    "approximate_lump",
    "deviation",
    "epsilon_max",
    "find_epsilon",
    "orthonormalize_rows",
    "staircase",
    "DualVector",
    "OdeSystem",
    "evaluate_drift",
    "evaluate_drift_dual",
    "expression_to_text",
    "parse_model",
    "ReductionReport",
    "SolverConfig",
    "Trajectory",
    "build_reduced_drift",
    "error_bound_constant",
    "estimate_lipschitz",
    "integrate",
    "reduction_report",
    "write_series_csv",
    "__version__",
]
