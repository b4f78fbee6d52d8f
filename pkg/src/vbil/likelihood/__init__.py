"""Unbiased likelihood estimators and data containers."""

from .abc import (
    AbcData,
    AbcEstimator,
    abc_estimate,
    abc_summaries,
    alpha_stable_simulate,
    stable_to_tilde,
    tilde_to_stable,
)
from .base import (
    LOG_FLOOR,
    EstimateBatch,
    EstimatorKind,
    EstimatorSpec,
    ExactEstimator,
    FixedN,
    LikelihoodEstimator,
    LogLikEstimate,
    TargetSigma2,
    log_mean_exp,
)
from .panel import (
    GlmmData,
    PanelCountsPolicy,
    PanelISEstimator,
    adapt_particles,
    panel_is_estimate,
    panel_var_estimate,
)
from .particle import (
    LinearGaussianSSM,
    ParticleFilterEstimator,
    SsmData,
    StochasticVolatilityModel,
    bootstrap_particle_filter,
)
from .refine import MarginalRefineEstimator, marginal_refine_estimate
from .synthetic import SyntheticNoiseEstimator, synthetic_gaussian_noise_estimate

__all__ = [
    "AbcData",
    "AbcEstimator",
    "EstimateBatch",
    "EstimatorKind",
    "EstimatorSpec",
    "ExactEstimator",
    "FixedN",
    "GlmmData",
    "LOG_FLOOR",
    "LikelihoodEstimator",
    "LinearGaussianSSM",
    "LogLikEstimate",
    "MarginalRefineEstimator",
    "PanelCountsPolicy",
    "PanelISEstimator",
    "ParticleFilterEstimator",
    "SsmData",
    "StochasticVolatilityModel",
    "SyntheticNoiseEstimator",
    "TargetSigma2",
    "abc_estimate",
    "abc_summaries",
    "adapt_particles",
    "alpha_stable_simulate",
    "bootstrap_particle_filter",
    "log_mean_exp",
    "marginal_refine_estimate",
    "panel_is_estimate",
    "panel_var_estimate",
    "stable_to_tilde",
    "synthetic_gaussian_noise_estimate",
    "tilde_to_stable",
]
