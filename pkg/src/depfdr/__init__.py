"""Dependence-adjusted step-up FDR procedures.

Multiple-testing procedures whose rejection thresholds are calibrated against
the known joint distribution of the test statistics (multivariate Gaussian,
multivariate t, or Gaussian linear models), with exact conditional error
computations rather than worst-case corrections.
"""

from .stepup import (
    NumericError,
    PValueVector,
    ThresholdFamily,
    StepUpResult,
    step_up,
    q_values,
    effective_threshold,
    geometric_thresholds,
    leave_one_rejections,
    harmonic_number,
)
from .models import (
    Covariance,
    IdentityCovariance,
    ArCovariance,
    BlockCovariance,
    DenseCovariance,
    covariance_from_json,
    MvzProblem,
    MvtProblem,
    LinearModelProblem,
    MarginalPValues,
    ConditioningStatistic,
    marginal_pvalues,
    conditioning_statistic,
    reconstruct,
    ols_reduce,
    monotone_structure,
    default_gamma,
    problem_from_json,
    problem_to_json,
)
from .homotopy import (
    Knot,
    KnotArray,
    KnotPath,
    roots_quasi_quadratic,
    screen_extrema,
    knots_gaussian,
    path,
    exact_g,
    acceptance_intervals,
    dump_knots_csv,
)
from .calibrate import (
    CalibrationRecord,
    MethodDescriptor,
    RejectionReport,
    dsu_calibrate,
    structurally_safe,
    prune,
    directional_decisions,
    report_to_json,
    report_to_json_bytes,
    write_report_csv,
)
from .refine import (
    RefineConfig,
    RefinedRecord,
    refined_calibrate,
    refine_shortcuts,
)

__version__ = "0.1.0"

__all__ = [
    "NumericError",
    "PValueVector",
    "ThresholdFamily",
    "StepUpResult",
    "step_up",
    "q_values",
    "effective_threshold",
    "geometric_thresholds",
    "leave_one_rejections",
    "harmonic_number",
    "Covariance",
    "IdentityCovariance",
    "ArCovariance",
    "BlockCovariance",
    "DenseCovariance",
    "covariance_from_json",
    "MvzProblem",
    "MvtProblem",
    "LinearModelProblem",
    "MarginalPValues",
    "ConditioningStatistic",
    "marginal_pvalues",
    "conditioning_statistic",
    "reconstruct",
    "ols_reduce",
    "monotone_structure",
    "default_gamma",
    "problem_from_json",
    "problem_to_json",
    "Knot",
    "KnotArray",
    "KnotPath",
    "roots_quasi_quadratic",
    "screen_extrema",
    "knots_gaussian",
    "path",
    "exact_g",
    "acceptance_intervals",
    "dump_knots_csv",
    "CalibrationRecord",
    "MethodDescriptor",
    "RejectionReport",
    "dsu_calibrate",
    "structurally_safe",
    "prune",
    "directional_decisions",
    "report_to_json",
    "report_to_json_bytes",
    "write_report_csv",
    "RefineConfig",
    "RefinedRecord",
    "refined_calibrate",
    "refine_shortcuts",
    "__version__",
]
