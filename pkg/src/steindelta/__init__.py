"""Explicit delta-method error bounds with a Monte Carlo verification harness."""

from .bounds import (
    BoundReport,
    FnEnvelope,
    GrowthEnvelope,
    bound_delta_multivariate,
    bound_delta_univariate,
    bound_fn_multivariate,
    bound_fn_univariate,
    dominating_envelope,
    kolmogorov_from_d3,
    required_moment_orders,
    small_constants,
    stein_derivative_bound,
    theorem_constants,
)
from .core import (
    TestBudget,
    a_factor,
    abs_normal_moment,
    composite_derivative_bound,
    faa_di_bruno_enumerate,
    h_budget,
    stirling2,
)
from .mcverify import (
    DistanceEstimate,
    RateFit,
    SmoothTestFunction,
    estimate_delta,
    estimate_delta_h,
    fit_rate,
    plan_bound_report,
    point_mass_check,
    stein_solution_check,
    verify_bound,
)
from .moments import (
    DataModel,
    MomentTable,
    analytic_moments,
    centered_bernoulli,
    empirical_moments,
    mixed_third_moments,
    model_covariance,
    multinomial_indicator,
    rademacher,
    rank_scores,
    user_sampler,
    w_moment,
)
from .statistics import (
    ExperimentPlan,
    LimitDescriptor,
    MapSpec,
    builtin,
    friedman_statistic,
    gaussian_sampler,
    pearson_statistic,
    sample_limit,
    sample_statistic,
    sen_statistic,
)

__version__ = "0.1.0"

__all__ = [
    "BoundReport",
    "DataModel",
    "DistanceEstimate",
    "ExperimentPlan",
    "FnEnvelope",
    "GrowthEnvelope",
    "LimitDescriptor",
    "MapSpec",
    "MomentTable",
    "RateFit",
    "SmoothTestFunction",
    "TestBudget",
    "a_factor",
    "abs_normal_moment",
    "analytic_moments",
    "bound_delta_multivariate",
    "bound_delta_univariate",
    "bound_fn_multivariate",
    "bound_fn_univariate",
    "builtin",
    "centered_bernoulli",
    "composite_derivative_bound",
    "dominating_envelope",
    "empirical_moments",
    "estimate_delta",
    "estimate_delta_h",
    "faa_di_bruno_enumerate",
    "fit_rate",
    "friedman_statistic",
    "gaussian_sampler",
    "h_budget",
    "kolmogorov_from_d3",
    "mixed_third_moments",
    "model_covariance",
    "multinomial_indicator",
    "pearson_statistic",
    "plan_bound_report",
    "point_mass_check",
    "rademacher",
    "rank_scores",
    "required_moment_orders",
    "sample_limit",
    "sample_statistic",
    "sen_statistic",
    "small_constants",
    "stein_derivative_bound",
    "stein_solution_check",
    "stirling2",
    "theorem_constants",
    "user_sampler",
    "verify_bound",
    "w_moment",
]
