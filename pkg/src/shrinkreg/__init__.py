"""Empirical Bayes linear shrinkage of unit effects and regression on the estimates."""
from .panel import PanelData, PanelError, Unit, grand_mean, load_panel, unit_means, write_panel
from .regression import (
    RegressionReport,
    SingularDesignError,
    cluster_omega,
    ehw_omega,
    make_report,
    ols_fit,
    regress,
)
from .shrinkage import (
    EstimatorUndefinedError,
    Method,
    ShrinkageResult,
    VarianceComponents,
    estimate,
    estimate_cw,
    estimate_fe,
    estimate_he,
    estimate_ho,
    kappa_hat,
    variance_components,
)
from .simulation import DgpSpec, SimReport, coverage_curve, draw_panel, run_monte_carlo

__all__ = [
    "PanelData",
    "PanelError",
    "Unit",
    "grand_mean",
    "load_panel",
    "unit_means",
    "write_panel",
    "RegressionReport",
    "SingularDesignError",
    "cluster_omega",
    "ehw_omega",
    "make_report",
    "ols_fit",
    "regress",
    "EstimatorUndefinedError",
    "Method",
    "ShrinkageResult",
    "VarianceComponents",
    "estimate",
    "estimate_cw",
    "estimate_fe",
    "estimate_he",
    "estimate_ho",
    "kappa_hat",
    "variance_components",
    "DgpSpec",
    "SimReport",
    "coverage_curve",
    "draw_panel",
    "run_monte_carlo",
]

__version__ = "0.1.0"
