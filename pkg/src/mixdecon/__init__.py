"""Mixing-distribution deconvolution, functional confidence intervals and
inverse-probability survey weighting under non-response."""

from .core import (
    NR,
    CalibrationConstraint,
    CovarianceEstimate,
    DegenerateResponseError,
    EmpiricalFrequencies,
    EmptySampleError,
    Functional,
    InfeasibleEllipsoidError,
    InfeasibleError,
    InvalidSpecError,
    KernelMatrix,
    MixdeconError,
    MixingEstimate,
    OutcomeSpace,
    SingularCovarianceError,
    SupportGrid,
    SurveyRecord,
    TabulationError,
    UndefinedConditionalError,
    flatten_joint_index,
    unflatten_joint_index,
)
from .kernels import (
    DEFAULT_ATTEMPT_GRID,
    GeometricCensoredSpec,
    GeometricTruncatedSpec,
    NormalDiscretizedSpec,
    ShiftedBinomialSpec,
    geometric_censored_kernel,
    geometric_truncated_kernel,
    joint_kernel,
    load_kernel_csv,
    normal_discretized_kernel,
    response_probability,
    shifted_binomial_kernel,
)
from .empirics import DEFAULT_RIDGE, multinomial_covariance, tabulate
from .qp import QPSolution, SimplexQP, kkt_residual, min_quadratic_given_level, solve_qp
from .deconvolve import (
    conditional_mean_inv_p,
    conditional_mean_p,
    functional_value,
    npmle,
)
from .confidence import FunctionalInterval, chi2_quantile, functional_ci
from .survey import (
    SurveyDataset,
    SurveyWeights,
    estimate_proportions,
    estimate_total,
    estimate_weights_censored,
    estimate_weights_truncated,
    hybrid_estimate,
    mixture_total,
    oracle_proportions,
)
from .simulate import (
    ExperimentConfig,
    PriorFamily,
    draw_population,
    example1_demo,
    run_experiment,
)

__version__ = "0.1.0"
