"""Stochastic volatility model fitted with a bootstrap particle filter."""

from __future__ import annotations

import numpy as np

from ..errors import DomainError
from ..expfam import BetaFactor, InverseGammaFactor, MvnFactor, ProductFamily
from ..likelihood.particle import ParticleFilterEstimator, SsmData, StochasticVolatilityModel
from .base import ModelSpec, Transform, beta_prior, inverse_gamma_prior, normal_prior


def sv_simulate_states(mu, phi, sigma2, T, rng) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(x, y)`` of length ``T``."""
    if abs(phi) >= 1:
        raise DomainError(f"|phi| must be below 1, got {phi}")
    if sigma2 <= 0:
        raise DomainError("sigma2 must be positive")
    x = np.empty(T)
    v = rng.standard_normal(T)
    x[0] = mu + np.sqrt(sigma2 / (1 - phi * phi)) * v[0]
    sd = np.sqrt(sigma2)
    for t in range(1, T):
        x[t] = mu + phi * (x[t - 1] - mu) + sd * v[t]
    y = np.exp(0.5 * x) * rng.standard_normal(T)
    return x, y


def sv_simulate(mu, phi, sigma2, T, rng) -> SsmData:
    return SsmData(sv_simulate_states(mu, phi, sigma2, T, rng)[1])


def demeaned_log_returns(prices) -> np.ndarray:
    """``100 (log(r_{t+1}/r_t) - mean)`` for a price series of length ``T + 1``."""
    r = np.log(np.asarray(prices, dtype=float))
    d = np.diff(r)
    return 100.0 * (d - d.mean())


def prices_from_returns(y, start: float = 1.0) -> np.ndarray:
    """Price path whose percentage log returns are ``y``."""
    return start * np.exp(np.concatenate([[0.0], np.cumsum(np.asarray(y, dtype=float) / 100.0)]))


def sv_fixture_data(rng, mu=-0.8, phi=0.95, sigma2=0.03, T=1001) -> SsmData:
    """Simulated stand-in for an exchange-rate series: SV returns turned into
    a price path and then preprocessed as demeaned percentage log returns."""
    y = sv_simulate(mu, phi, sigma2, T, rng).y
    return SsmData(demeaned_log_returns(prices_from_returns(y)))


def sv_initial_family(mu_mean=0.0, mu_var=0.3, tau_shapes=(95.0, 5.0), s2_shapes=(11.0, 1.0)):
    return ProductFamily(
        [
            MvnFactor.from_moments([mu_mean], [[mu_var]]),
            BetaFactor.from_shapes(*tau_shapes, min_shape=1.0),
            InverseGammaFactor.from_shapes(*s2_shapes),
        ]
    )


def tau_to_phi(thetas) -> np.ndarray:
    out = np.array(np.atleast_2d(thetas), dtype=float)
    out[:, 1] = 2.0 * out[:, 1] - 1.0
    return out


def phi_to_tau(phi):
    return 0.5 * (1.0 + np.asarray(phi, dtype=float))


def sv_spec(data: SsmData, n_particles: int = 100, family: ProductFamily | None = None) -> ModelSpec:
    """theta = (mu, tau, sigma2) with priors N(0, 10), Beta(20, 1.5), IG(2.5, 0.025)."""
    return ModelSpec(
        name="sv",
        param_names=["mu", "tau", "sigma2"],
        family=family or sv_initial_family(),
        estimator=ParticleFilterEstimator(data, StochasticVolatilityModel(), n_particles),
        prior_blocks=[normal_prior(0.0, 10.0), beta_prior(20.0, 1.5), inverse_gamma_prior(2.5, 0.025)],
        n_obs=data.T,
        transform=Transform(("identity", "logit", "log")),
        report=tau_to_phi,
        report_names=["mu", "phi", "sigma2"],
    )
