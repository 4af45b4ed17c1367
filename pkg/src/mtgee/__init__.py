"""mtgee: martingale-transform estimating equations for evolutionary clustered series."""

from . import corr, diagnostics, inference, simgen
from .errors import (
    ContractError,
    CorrelationDegeneracyError,
    DataError,
    InstabilityError,
    ModelViolationError,
    MtgeeError,
    NumericalError,
    RankDeficiencyError,
    SaturationError,
    SolverFailureError,
    StudyError,
)
from .estfun import (
    EstimatingContext,
    FitResult,
    SolveReport,
    TwoStepResult,
    eval_g,
    eval_jacobian,
    fit,
    fit_two_step,
    solve_linear,
    solve_newton,
    working_independence_estimate,
)
from .inference import (
    SandwichEstimate,
    component_intervals,
    confidence_interval,
    normal_quantile,
    predict_next,
    sandwich,
)
from .model import (
    ClusterSeries,
    ConditionalMoments,
    LinkSpec,
    TimeStep,
    conditional_moments,
    get_link,
    link_eval,
)
from .simgen import (
    EstimatorSpec,
    MonteCarloReport,
    SimDesign,
    coverage_study,
    generate_ar2,
    monte_carlo_study,
    mvn_sample,
    default_estimators,
    substream,
    true_correlation,
)

__version__ = "0.1.0"

__all__ = [
    "ClusterSeries",
    "ConditionalMoments",
    "ContractError",
    "CorrelationDegeneracyError",
    "DataError",
    "EstimatingContext",
    "EstimatorSpec",
    "FitResult",
    "InstabilityError",
    "LinkSpec",
    "ModelViolationError",
    "MonteCarloReport",
    "MtgeeError",
    "NumericalError",
    "RankDeficiencyError",
    "SandwichEstimate",
    "SaturationError",
    "SimDesign",
    "SolveReport",
    "SolverFailureError",
    "StudyError",
    "TimeStep",
    "TwoStepResult",
    "component_intervals",
    "conditional_moments",
    "confidence_interval",
    "corr",
    "coverage_study",
    "diagnostics",
    "eval_g",
    "eval_jacobian",
    "fit",
    "fit_two_step",
    "generate_ar2",
    "get_link",
    "inference",
    "link_eval",
    "monte_carlo_study",
    "mvn_sample",
    "normal_quantile",
    "default_estimators",
    "predict_next",
    "sandwich",
    "simgen",
    "solve_linear",
    "solve_newton",
    "substream",
    "true_correlation",
    "working_independence_estimate",
]
