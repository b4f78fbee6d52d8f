"""Alpha-stable model fitted by likelihood-free VBIL on quantile summaries."""

from __future__ import annotations

import numpy as np

from ..expfam import MvnFactor, ProductFamily
from ..likelihood.abc import (
    AbcData,
    AbcEstimator,
    stable_to_tilde,
    tilde_stable_simulator,
    tilde_to_stable,
)
from .base import ModelSpec, Transform, normal_prior


def tilde_to_stable_rows(thetas) -> np.ndarray:
    thetas = np.atleast_2d(thetas)
    return np.array([tilde_to_stable(t) for t in thetas])


def abc_initial_family(data: AbcData, var: float = 0.01) -> ProductFamily:
    """Normal start centred at (alpha, beta) = (1.55, 0), the observed scale
    estimate and the sample median."""
    mu = stable_to_tilde(1.55, 0.0, data.gamma_hat_obs, float(np.median(data.y)))
    return ProductFamily([MvnFactor.from_moments(mu, var * np.eye(4))])


def abc_alpha_stable_spec(
    data: AbcData, n_pseudo: int = 5, family: ProductFamily | None = None, prior_var: float = 100.0
) -> ModelSpec:
    return ModelSpec(
        name="stable",
        param_names=["alpha_t", "beta_t", "gamma_t", "delta_t"],
        family=family or abc_initial_family(data),
        estimator=AbcEstimator(data, tilde_stable_simulator, n_pseudo),
        prior_blocks=[normal_prior(np.zeros(4), np.full(4, prior_var))],
        n_obs=data.y.shape[0],
        transform=Transform(("identity",) * 4),
        report=tilde_to_stable_rows,
        report_names=["alpha", "beta", "gamma", "delta"],
    )
