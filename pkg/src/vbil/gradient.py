"""Score-function estimators of the KL gradient.

Every estimator here has the form ``mean_s score_i(theta_s) * (F_i(s) - c_i)``
where ``F_i = log q - h_hat`` (or its per-factor restriction) and ``c_i`` is
a control-variate constant taken from the previous iteration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .expfam import ProductFamily
from .likelihood.base import LOG_FLOOR

CLIP_FACTOR = 100.0


@dataclass
class SampleSet:
    """One iteration's draws with their estimated log-likelihoods.

    ``log_prior_blocks`` is ``(S, K)``: the prior log density split over the
    family's factors (a single column is allowed when the prior does not
    factorise, in which case factorised gradients are unavailable).
    Draws outside the prior support get the same floor as an underflowed
    likelihood estimate, so they push the fit away instead of poisoning it
    with infinities.
    """

    thetas: np.ndarray
    log_lik: np.ndarray
    log_prior_blocks: np.ndarray
    log_q_blocks: np.ndarray
    score: np.ndarray

    @classmethod
    def build(cls, family: ProductFamily, thetas, log_lik, log_prior_blocks) -> "SampleSet":
        thetas = np.atleast_2d(thetas)
        lp = np.asarray(log_prior_blocks, dtype=float)
        if lp.ndim == 1:
            lp = lp[:, None]
        lp = np.where(np.isnan(lp) | (lp < LOG_FLOOR), LOG_FLOOR, lp)
        return cls(
            thetas,
            np.asarray(log_lik, dtype=float),
            lp,
            family.log_density_blocks(thetas),
            family.score(thetas),
        )

    @property
    def S(self) -> int:
        return self.thetas.shape[0]

    @property
    def h(self) -> np.ndarray:
        """``h_hat = log p(theta) + log p_hat(y | theta)``."""
        return self.log_prior_blocks.sum(axis=1) + self.log_lik

    @property
    def log_q(self) -> np.ndarray:
        return self.log_q_blocks.sum(axis=1)


@dataclass
class GradientEstimate:
    grad: np.ndarray
    cv_constants_used: np.ndarray
    per_sample_h: np.ndarray
    samples: int
    clipped: bool = False


@dataclass
class CvState:
    c: np.ndarray
    initialized: bool = False

    @classmethod
    def zeros(cls, n_params: int) -> "CvState":
        return cls(np.zeros(n_params), False)


def integrand(family: ProductFamily, samples: SampleSet, factorized: bool = False) -> np.ndarray:
    """Per-coordinate multiplier ``F_i(s)`` of the score, shape ``(S, P)``.

    Non-factorised: ``log q - h_hat`` for every coordinate. Factorised:
    coordinate ``i`` in factor ``k`` uses ``log q_k - log p_k - log p_hat``.
    """
    if not factorized:
        return np.repeat((samples.log_q - samples.h)[:, None], family.n_params, axis=1)
    if samples.log_prior_blocks.shape[1] != family.n_factors:
        raise ContractError("factorised gradients need the prior split over the family's factors")
    per_factor = samples.log_q_blocks - samples.log_prior_blocks - samples.log_lik[:, None]
    return per_factor[:, family.param_factor_index()]


def naive_gradient(family: ProductFamily, samples: SampleSet) -> GradientEstimate:
    return cv_gradient(family, samples, CvState.zeros(family.n_params))


def cv_gradient(
    family: ProductFamily, samples: SampleSet, cv: CvState, factorized: bool = False
) -> GradientEstimate:
    """``mean_s score_i (F_i - c_i)``; ``c`` must not depend on these samples."""
    F = integrand(family, samples, factorized)
    g = np.mean(samples.score * (F - cv.c[None, :]), axis=0)
    return GradientEstimate(g, cv.c.copy(), samples.h, samples.S)


def factor_gradient(
    family: ProductFamily, samples: SampleSet, k: int, h_k, cv: CvState | None = None
) -> np.ndarray:
    """Gradient block for factor ``k`` with ``h_k`` the terms of ``h_hat``
    involving block ``k`` (an ``(S,)`` array, or a callable on ``samples``)."""
    if callable(h_k):
        h_k = h_k(samples)
    s = family.param_slices[k]
    c = np.zeros(s.stop - s.start) if cv is None else cv.c[s]
    F = (samples.log_q_blocks[:, k] - np.asarray(h_k, dtype=float))[:, None]
    return np.mean(samples.score[:, s] * (F - c[None, :]), axis=0)


def update_cv_constants(
    family: ProductFamily, samples: SampleSet, previous: CvState | None = None, factorized=False
) -> CvState:
    """Optimal constants ``cov(score_i F_i, score_i) / var(score_i)`` from this
    iteration, to be used in the next one. Coordinates with zero score
    variance keep their previous value."""
    if samples.S < 2:
        raise ContractError("need at least two samples to update control variates")
    F = integrand(family, samples, factorized)
    z = samples.score
    zc = z - z.mean(axis=0)
    var = np.sum(zc * zc, axis=0) / (samples.S - 1)
    cov = np.sum((z * F - np.mean(z * F, axis=0)) * zc, axis=0) / (samples.S - 1)
    prev = np.zeros(family.n_params) if previous is None else previous.c
    ok = var > 0
    c = np.where(ok, cov / np.where(ok, var, 1.0), prev)
    c = np.where(np.isfinite(c), c, prev)
    return CvState(c, True)


def natural_transform(family: ProductFamily, grad: np.ndarray) -> np.ndarray:
    """Blockwise ``I_F,k^{-1} g_k``; raises ConditioningError on a bad factor."""
    out = np.empty_like(grad)
    for f, s in zip(family.factors, family.param_slices):
        out[s] = f.fisher_inverse() @ grad[s]
    return out


def clip(direction: np.ndarray, factor: float = CLIP_FACTOR) -> tuple[np.ndarray, bool]:
    """Rescale to norm ``factor * len(direction)`` if it is longer."""
    bound = factor * direction.shape[0]
    norm = float(np.linalg.norm(direction))
    if norm > bound:
        return direction * (bound / norm), True
    return direction, False
