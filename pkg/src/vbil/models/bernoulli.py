"""Bernoulli observations with a uniform prior: a conjugate test bed."""

from __future__ import annotations

import numpy as np
from scipy import special

from ..errors import DomainError
from ..expfam import BetaFactor, ProductFamily
from ..likelihood.base import ExactEstimator
from .base import ModelSpec, Transform, uniform_prior


def bernoulli_simulate(theta: float, n: int, rng) -> np.ndarray:
    if not 0.0 <= theta <= 1.0:
        raise DomainError("theta must lie in [0, 1]")
    return (rng.random(n) < theta).astype(float)


def bernoulli_loglik(n: int, k: int):
    def loglik(thetas):
        t = np.atleast_2d(thetas)[:, 0]
        return k * np.log(t) + (n - k) * np.log1p(-t)

    return loglik


def posterior_shapes(n: int, k: int) -> tuple[float, float]:
    return float(k + 1), float(n - k + 1)


def log_evidence(n: int, k: int) -> float:
    """``log p(y)`` for an ordered 0/1 sequence under a uniform prior."""
    return float(special.betaln(k + 1, n - k + 1))


def kl_beta(alpha, beta, a0, b0) -> float:
    """``KL(Beta(alpha, beta) || Beta(a0, b0))``."""
    s = alpha + beta
    return float(
        special.betaln(a0, b0)
        - special.betaln(alpha, beta)
        + (alpha - a0) * special.digamma(alpha)
        + (beta - b0) * special.digamma(beta)
        + (a0 + b0 - s) * special.digamma(s)
    )


def kl_beta_gradient(alpha, beta, a0, b0) -> np.ndarray:
    """Gradient of :func:`kl_beta` in ``(alpha, beta)``.

    Equals ``I_F(lambda) (lambda - lambda_post)``, which vanishes at the
    posterior shapes.
    """
    s = alpha + beta
    t_s = special.polygamma(1, s)
    common = (s - a0 - b0) * t_s
    return np.array(
        [
            (alpha - a0) * special.polygamma(1, alpha) - common,
            (beta - b0) * special.polygamma(1, beta) - common,
        ]
    )


def bernoulli_beta_spec(n: int, k: int, init=(5.0, 5.0)) -> ModelSpec:
    if not 0 <= k <= n:
        raise DomainError(f"need 0 <= k <= n, got k={k}, n={n}")
    loglik = bernoulli_loglik(n, k)
    family = ProductFamily([BetaFactor.from_shapes(*init)])
    a0, b0 = posterior_shapes(n, k)
    return ModelSpec(
        name="bernoulli",
        param_names=["theta"],
        family=family,
        estimator=ExactEstimator(loglik),
        prior_blocks=[uniform_prior()],
        n_obs=max(n, 1),
        transform=Transform(("logit",)),
        exact_loglik=loglik,
        extras={"n": n, "k": k, "posterior": (a0, b0), "log_evidence": log_evidence(n, k)},
    )
