"""Importance-sampling estimate of a marginal likelihood ``p(y | theta_j)``.

The remaining parameters ``theta_rest`` are integrated out using a proposal
density, typically the pilot variational factors for those blocks, optionally
tempered to flatten the tails.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..errors import ContractError
from .base import (
    LOG_FLOOR,
    EstimatorKind,
    EstimatorSpec,
    FixedN,
    LikelihoodEstimator,
    LogLikEstimate,
    log_mean_exp,
)


def marginal_refine_estimate(
    joint: Callable,
    proposal,
    prior_conditional: Callable | None,
    theta_j,
    n_draws: int,
    rng: np.random.Generator,
    assemble: Callable | None = None,
) -> LogLikEstimate:
    """Estimate ``log int w(theta_j, theta_rest) d theta_rest``.

    Parameters
    ----------
    joint
        Vectorised ``joint(thetas) -> (S,)`` on full parameter vectors. When
        ``prior_conditional`` is None this is ``log p(theta) + log p(y|theta)``
        and the estimate targets ``p(theta_j) p(y | theta_j)``; otherwise it is
        ``log p(y | theta)`` and the integrand is weighted by
        ``prior_conditional(theta_rest, theta_j)``, giving ``p(y | theta_j)``.
    proposal
        Object with ``n_uniforms``, ``sample(u)`` and ``log_density(x)`` over
        ``theta_rest`` (a :class:`~vbil.expfam.ProductFamily` or factor), or
        None when nothing is integrated out.
    assemble
        ``assemble(theta_j, rest) -> full thetas``; defaults to concatenation
        ``[theta_j, rest]``.
    """
    theta_j = np.atleast_1d(np.asarray(theta_j, dtype=float))
    if assemble is None:
        assemble = _concat
    if proposal is None:
        full = assemble(theta_j, np.empty((1, 0)))
        value = float(np.atleast_1d(joint(full))[0])
        if prior_conditional is not None:
            value += float(np.atleast_1d(prior_conditional(np.empty((1, 0)), theta_j))[0])
        return _finish(np.array([value]), 1)
    if n_draws < 1:
        raise ContractError("n_draws must be at least 1")
    u = np.clip(rng.random((n_draws, proposal.n_uniforms)), 2.0**-53, 1 - 2.0**-53)
    rest = proposal.sample(u)
    log_q = proposal.log_density(rest)
    if np.any(~np.isfinite(log_q)):
        raise ContractError("proposal density is zero at a drawn point")
    log_w = np.asarray(joint(assemble(theta_j, rest)), dtype=float) - log_q
    if prior_conditional is not None:
        log_w = log_w + np.asarray(prior_conditional(rest, theta_j), dtype=float)
    return _finish(log_w, n_draws)


def _concat(theta_j, rest):
    return np.hstack([np.broadcast_to(theta_j, (rest.shape[0], theta_j.shape[0])), rest])


def _finish(log_w, n):
    log_w = np.where(np.isnan(log_w), -np.inf, log_w)
    value = float(log_mean_exp(log_w))
    if not np.isfinite(value):
        return LogLikEstimate(LOG_FLOOR, n, None, True)
    w = np.exp(log_w - np.max(log_w))
    gamma = n * np.sum(w * w) / np.sum(w) ** 2 - 1.0
    return LogLikEstimate(value, n, float(gamma / n))


class MarginalRefineEstimator(LikelihoodEstimator):
    """Wraps :func:`marginal_refine_estimate` for a fixed block split."""

    def __init__(self, joint, proposal, prior_conditional=None, n_draws=100, assemble=None):
        self.joint = joint
        self.proposal = proposal
        self.prior_conditional = prior_conditional
        self.n_draws = int(n_draws)
        self.assemble = assemble
        self.spec = EstimatorSpec(EstimatorKind.MARGINAL_REFINEMENT, FixedN(self.n_draws))

    def estimate(self, theta, rng):
        return marginal_refine_estimate(
            self.joint, self.proposal, self.prior_conditional, theta, self.n_draws, rng, self.assemble
        )
