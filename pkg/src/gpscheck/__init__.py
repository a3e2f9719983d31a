"""Specification tests and IPW effects for generalized propensity scores.

The core object is a Cramer-von Mises statistic built on doubly projected
residuals: each model residual is orthogonalized against the score of the
fitted propensity model, and the regressors are projected onto every
direction of the sphere, which collapses into the closed-form solid-angle
kernel of geometry.an_matrix. Critical values come from a multiplier
bootstrap that never refits the model.

Typical use:

    from gpscheck import Dataset, run_test
    result = run_test(Dataset(X, T), "binary_logit")
    result.p_value

plus fit_mle for standalone estimation, sp_* for the single-projection
comparison tests, ipw_ate / percentile_bootstrap for treatment effects,
and run_experiment for the Monte Carlo designs.
"""

from .baselines import SpTestSpec, sp_bootstrap, sp_statistic
from .dptest import (
    ProjectedResiduals,
    TestConfig,
    TestResult,
    cvm_statistic,
    draw_multipliers,
    multiplier_bootstrap,
    projected_residuals,
    run_test,
)
from .effects import AteResult, ipw_ate, percentile_bootstrap, percentile_bootstrap_pairs
from .errors import (
    DataError,
    EmptyGroupError,
    GpscheckError,
    KernelSizeError,
    NotConvergedError,
    NumericError,
    SeparationError,
    SingularDeltaError,
    SingularHessianError,
    TooManyFailedResamplesError,
)
from .estimation import FitResult, fit_mle, loglik, loglik_gradient
from .geometry import (
    ProjectionKernel,
    aijr,
    an_matrix,
    cached_an_matrix,
    load_kernel,
    save_kernel,
    sphere_constant,
)
from .models import FAMILIES, Dataset, LevelSet, PropensityModel
from .simulation import (
    DGP_IDS,
    DgpSpec,
    SimulatedSample,
    SimulationReport,
    generate,
    run_experiment,
)

__version__ = "0.1.0"

__all__ = [
    "AteResult",
    "DGP_IDS",
    "DataError",
    "Dataset",
    "DgpSpec",
    "EmptyGroupError",
    "FAMILIES",
    "FitResult",
    "GpscheckError",
    "KernelSizeError",
    "LevelSet",
    "NotConvergedError",
    "NumericError",
    "ProjectedResiduals",
    "ProjectionKernel",
    "PropensityModel",
    "SeparationError",
    "SimulatedSample",
    "SimulationReport",
    "SingularDeltaError",
    "SingularHessianError",
    "SpTestSpec",
    "TestConfig",
    "TestResult",
    "TooManyFailedResamplesError",
    "aijr",
    "an_matrix",
    "cached_an_matrix",
    "cvm_statistic",
    "draw_multipliers",
    "fit_mle",
    "generate",
    "ipw_ate",
    "load_kernel",
    "loglik",
    "loglik_gradient",
    "multiplier_bootstrap",
    "percentile_bootstrap",
    "percentile_bootstrap_pairs",
    "projected_residuals",
    "run_experiment",
    "run_test",
    "save_kernel",
    "sphere_constant",
    "sp_bootstrap",
    "sp_statistic",
    "__version__",
]
