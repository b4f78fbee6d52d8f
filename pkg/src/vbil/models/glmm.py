"""Logistic regression with a normal random intercept per panel."""

from __future__ import annotations

import numpy as np
from scipy import optimize, special

from ..errors import DomainError
from ..expfam import InverseGammaFactor, MvnFactor, ProductFamily
from ..likelihood.base import TargetSigma2
from ..likelihood.panel import GlmmData, PanelISEstimator
from .base import ModelSpec, Transform, gamma_prior, normal_prior


def glmm_simulate(beta, tau2: float, n: int, n_i: int, rng: np.random.Generator) -> GlmmData:
    """``logit p_ij = beta_1 + beta_2 x_ij + alpha_i`` with ``x_ij ~ U(0, 1)``."""
    beta = np.asarray(beta, dtype=float)
    if tau2 < 0:
        raise DomainError("tau2 must be non-negative")
    x = rng.random((n, n_i))
    X = np.stack([np.ones_like(x), x], axis=-1)
    alpha = np.sqrt(tau2) * rng.standard_normal(n)
    eta = X @ beta + alpha[:, None]
    y = (rng.random((n, n_i)) < special.expit(eta)).astype(float)
    return GlmmData(y, X, np.ones((n, n_i), dtype=bool))


def six_city_like_simulate(
    rng: np.random.Generator,
    beta=(-3.1, -0.2, 0.4),
    tau2: float = 4.7,
    n: int = 537,
    smoke_rate: float = 0.35,
) -> GlmmData:
    """Synthetic stand-in for the Six City wheeze data: 4 annual binary
    responses per child, centred age ``-2..1`` and a binary smoking indicator."""
    beta = np.asarray(beta, dtype=float)
    age = np.broadcast_to(np.arange(-2.0, 2.0), (n, 4))
    smoke = np.broadcast_to((rng.random(n) < smoke_rate).astype(float)[:, None], (n, 4))
    X = np.stack([np.ones((n, 4)), age, smoke], axis=-1)
    alpha = np.sqrt(tau2) * rng.standard_normal(n)
    y = (rng.random((n, 4)) < special.expit(X @ beta + alpha[:, None])).astype(float)
    return GlmmData(y, X, np.ones((n, 4), dtype=bool))


def logistic_fit(data: GlmmData) -> tuple[np.ndarray, np.ndarray]:
    """Fixed-effects logistic MLE ignoring the intercepts; returns (beta, cov)."""
    X = data.X[data.mask]
    y = data.y[data.mask]

    def nll(b):
        eta = X @ b
        return np.sum(np.logaddexp(0.0, eta) - y * eta)

    def grad(b):
        return X.T @ (special.expit(X @ b) - y)

    res = optimize.minimize(nll, np.zeros(X.shape[1]), jac=grad, method="BFGS")
    p = special.expit(X @ res.x)
    hess = (X * (p * (1 - p))[:, None]).T @ X
    return res.x, np.linalg.inv(hess)


def glmm_initial_family(data: GlmmData, tau2_mean: float = 1.0, inflate: float = 4.0) -> ProductFamily:
    """Start from the fixed-effects fit with its covariance inflated, and an
    inverse-gamma factor for tau2 with the given mean."""
    beta, cov = logistic_fit(data)
    return ProductFamily(
        [MvnFactor.from_moments(beta, inflate * cov), InverseGammaFactor.from_shapes(3.0, 2.0 * tau2_mean)]
    )


def glmm_logistic_spec(
    data: GlmmData,
    prior_scale: float = 50.0,
    tau2_prior=(1.0, 0.1),
    sigma2: float = 4.0,
    pilot_n: int = 20,
    family: ProductFamily | None = None,
    max_particles: int = 100_000,
) -> ModelSpec:
    """``beta ~ N(0, prior_scale I)``, ``tau2 ~ Gamma(shape, rate)``;
    ``q = N(beta) x IG(tau2)`` with the panel importance sampler tuned to
    ``Var(log p_hat) ~= sigma2``."""
    p = data.n_covariates
    family = family or glmm_initial_family(data)
    names = [f"beta{k + 1}" for k in range(p)] + ["tau2"]
    return ModelSpec(
        name="glmm",
        param_names=names,
        family=family,
        estimator=PanelISEstimator(data, TargetSigma2(sigma2, pilot_n), max_particles),
        prior_blocks=[normal_prior(np.zeros(p), np.full(p, prior_scale)), gamma_prior(*tau2_prior)],
        n_obs=data.n_panels,
        transform=Transform(("identity",) * p + ("log",)),
        extras={"sigma2": sigma2},
    )
