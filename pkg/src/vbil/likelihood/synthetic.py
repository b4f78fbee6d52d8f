"""Exact log-likelihood perturbed by lognormal noise with unit mean."""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..errors import DomainError
from .base import (
    EstimateBatch,
    EstimatorKind,
    EstimatorSpec,
    FixedN,
    LikelihoodEstimator,
    LogLikEstimate,
)


def synthetic_gaussian_noise_estimate(
    exact_loglik: Callable, theta, sigma2: float, rng: np.random.Generator
) -> LogLikEstimate:
    """Return ``exact_loglik(theta) + z`` with ``z ~ N(-sigma2/2, sigma2)``,
    so that ``exp(z)`` has mean one."""
    if sigma2 < 0:
        raise DomainError("sigma2 must be non-negative")
    exact = float(np.atleast_1d(exact_loglik(np.atleast_2d(theta)))[0])
    z = 0.0 if sigma2 == 0 else rng.normal(-0.5 * sigma2, np.sqrt(sigma2))
    return LogLikEstimate(exact + z, 0, float(sigma2))


class SyntheticNoiseEstimator(LikelihoodEstimator):
    """Vectorised :func:`synthetic_gaussian_noise_estimate`.

    The batch path draws all noise terms from one generator seeded by the
    batch seed, so it is reproducible but not row-for-row identical to
    repeated single calls.
    """

    def __init__(self, exact_loglik: Callable, sigma2: float):
        if sigma2 < 0:
            raise DomainError("sigma2 must be non-negative")
        self.exact_loglik = exact_loglik
        self.sigma2 = float(sigma2)
        self.spec = EstimatorSpec(EstimatorKind.SYNTHETIC_GAUSSIAN_NOISE, FixedN(1))

    def estimate(self, theta, rng):
        return synthetic_gaussian_noise_estimate(self.exact_loglik, theta, self.sigma2, rng)

    def estimate_batch(self, thetas, seed, executor=None):
        thetas = np.atleast_2d(thetas)
        exact = np.asarray(self.exact_loglik(thetas), dtype=float)
        if self.sigma2 > 0:
            rng = np.random.default_rng(seed)
            z = rng.normal(-0.5 * self.sigma2, np.sqrt(self.sigma2), size=exact.shape[0])
        else:
            z = np.zeros_like(exact)
        return EstimateBatch(exact + z, np.full(exact.shape[0], self.sigma2))
