"""Gaussian-process search for optimal dynamic treatment regimes.

Surrogates (interpolating, homoskedastic, heteroskedastic) of a noisy value
surface, Expected-Improvement sequential design on re-interpolated fits, a
normalized IPW value estimator, simulation scenarios, replicate harnesses
and a trial-data uncertainty pipeline.
"""

__version__ = "0.1.0"

from .bo import BoConfig, BoTrace, expected_improvement, propose_next, reinterpolate, run_bo
from .dtr import (
    Cohort,
    JointThreshold,
    LinearSharedRule,
    PropensityModel,
    ThresholdPerStage,
    Trajectory,
    ValueEstimator,
    bayesian_bootstrap_weights,
    estimation_surface,
    fit_propensity,
    ipw_value,
    is_adherent,
)
from .errors import (
    DtrGpError,
    FitError,
    NoAdherentPatients,
    NumericalError,
    PropensityFitError,
    ReplicateFailureError,
    RowError,
    SaturationError,
    SchemaError,
)
from .gp import (
    Design,
    GpFit,
    HyperPrior,
    NoiseSpec,
    PosteriorMoments,
    fit_hyperparams,
    log_marginal_likelihood,
    posterior_f,
    posterior_v,
    sample_posterior_paths,
)
from .hetero import estimate_pointwise_noise, fit_hetero_gp
from .kernels import KernelSpec, build_covariance, kernel_eval
from .scenarios import ScenarioSpec, generate_cohort, true_value

__all__ = [
    "BoConfig",
    "BoTrace",
    "Cohort",
    "Design",
    "DtrGpError",
    "FitError",
    "GpFit",
    "HyperPrior",
    "JointThreshold",
    "KernelSpec",
    "LinearSharedRule",
    "NoAdherentPatients",
    "NoiseSpec",
    "NumericalError",
    "PosteriorMoments",
    "PropensityFitError",
    "PropensityModel",
    "ReplicateFailureError",
    "RowError",
    "SaturationError",
    "ScenarioSpec",
    "SchemaError",
    "ThresholdPerStage",
    "Trajectory",
    "ValueEstimator",
    "bayesian_bootstrap_weights",
    "build_covariance",
    "estimate_pointwise_noise",
    "estimation_surface",
    "expected_improvement",
    "fit_hetero_gp",
    "fit_hyperparams",
    "fit_propensity",
    "generate_cohort",
    "ipw_value",
    "is_adherent",
    "kernel_eval",
    "log_marginal_likelihood",
    "posterior_f",
    "posterior_v",
    "propose_next",
    "reinterpolate",
    "run_bo",
    "sample_posterior_paths",
    "true_value",
]
