"""Importance-sampling likelihood for random-intercept panel models.

The random intercept of each panel is integrated out by importance sampling
from its prior ``N(0, tau2)``; the product of the per-panel averages is an
unbiased estimate of the likelihood. Parameter vectors are laid out as
``(beta_1, ..., beta_p, tau2)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..errors import ContractError, DomainError
from .base import (
    LOG_FLOOR,
    EstimatorKind,
    EstimatorSpec,
    FixedN,
    LikelihoodEstimator,
    LogLikEstimate,
    TargetSigma2,
)

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class GlmmData:
    """Padded panel arrays.

    ``y`` and ``mask`` are ``(n, m)``, ``X`` is ``(n, m, p)`` where ``m`` is
    the largest panel size. ``response`` is ``"bernoulli"`` (logit link) or
    ``"gaussian"`` (identity link, unit variance).
    """

    y: np.ndarray
    X: np.ndarray
    mask: np.ndarray
    response: str = "bernoulli"

    def __post_init__(self):
        if self.y.shape != self.mask.shape or self.X.shape[:2] != self.y.shape:
            raise ContractError("inconsistent panel array shapes")
        if np.any(self.mask.sum(axis=1) == 0):
            raise ContractError("every panel needs at least one observation")
        if self.response == "bernoulli":
            obs = self.y[self.mask]
            if not np.all((obs == 0) | (obs == 1)):
                raise DomainError("bernoulli responses must be 0 or 1")
        elif self.response != "gaussian":
            raise ContractError(f"unknown response family {self.response!r}")

    @property
    def n_panels(self) -> int:
        return self.y.shape[0]

    @property
    def n_covariates(self) -> int:
        return self.X.shape[2]

    @property
    def n_obs(self) -> int:
        return int(self.mask.sum())

    @classmethod
    def from_panels(cls, panels, response="bernoulli") -> "GlmmData":
        """Build from a list of ``(y_i, X_i)`` pairs."""
        panels = [(np.asarray(y, float).reshape(-1), np.atleast_2d(np.asarray(x, float))) for y, x in panels]
        if not panels:
            raise ContractError("no panels")
        m = max(y.shape[0] for y, _ in panels)
        p = panels[0][1].shape[1]
        n = len(panels)
        ys = np.zeros((n, m))
        xs = np.zeros((n, m, p))
        mask = np.zeros((n, m), dtype=bool)
        for i, (y, x) in enumerate(panels):
            if x.shape != (y.shape[0], p):
                raise ContractError(f"panel {i}: X has shape {x.shape}, expected {(y.shape[0], p)}")
            ys[i, : y.shape[0]] = y
            xs[i, : y.shape[0]] = x
            mask[i, : y.shape[0]] = True
        return cls(ys, xs, mask, response)


def _split_theta(theta):
    theta = np.asarray(theta, dtype=float).reshape(-1)
    beta, tau2 = theta[:-1], theta[-1]
    if not tau2 > 0:
        raise DomainError(f"tau2 must be positive, got {tau2}")
    return beta, tau2


def conditional_loglik(data: GlmmData, beta: np.ndarray, panel_idx: np.ndarray, alpha: np.ndarray):
    """``log p(y_i | alpha, beta)`` for each (panel, intercept) pair."""
    eta = (data.X @ beta)[panel_idx] + alpha[:, None]
    mask = data.mask[panel_idx]
    if data.response == "bernoulli":
        # sum_j y_ij * eta_ij is linear in alpha; only the log-partition needs the grid
        lin = (data.y * (data.X @ beta)).sum(axis=1, where=data.mask)
        ysum = data.y.sum(axis=1, where=data.mask)
        part = np.logaddexp(0.0, eta)
        part[~mask] = 0.0
        return lin[panel_idx] + ysum[panel_idx] * alpha - part.sum(axis=1)
    y = data.y[panel_idx]
    terms = -0.5 * (LOG_2PI + (y - eta) ** 2)
    return np.sum(np.where(mask, terms, 0.0), axis=1)


def _segment_stats(log_w: np.ndarray, counts: np.ndarray):
    """Per-panel log mean weight and ``gamma_hat`` from flat log weights."""
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    mx = np.maximum.reduceat(log_w, starts)
    safe = np.where(np.isfinite(mx), mx, 0.0)
    w = np.exp(log_w - np.repeat(safe, counts))
    s1 = np.add.reduceat(w, starts)
    s2 = np.add.reduceat(w * w, starts)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_mean = np.log(s1 / counts) + safe
        gamma = np.where(s1 > 0, counts * s2 / s1**2 - 1.0, 0.0)
    return log_mean, np.maximum(gamma, 0.0), s1 > 0


def panel_weights(data: GlmmData, theta, n_particles, rng, cond_loglik: Callable | None = None):
    """Draw intercepts from the prior and return flat log weights and counts.

    ``cond_loglik(panel_idx, alpha, beta)`` overrides the response model.
    """
    beta, tau2 = _split_theta(theta)
    counts = np.broadcast_to(np.asarray(n_particles, dtype=int), (data.n_panels,)).copy()
    if np.any(counts < 1):
        raise ContractError("each panel needs at least one particle")
    idx = np.repeat(np.arange(data.n_panels), counts)
    alpha = np.sqrt(tau2) * rng.standard_normal(idx.shape[0])
    if cond_loglik is None:
        log_w = conditional_loglik(data, beta, idx, alpha)
    else:
        log_w = np.asarray(cond_loglik(idx, alpha, beta), dtype=float)
    return log_w, counts


def panel_var_estimate(log_weights, counts) -> tuple[float, np.ndarray, bool]:
    """Estimated variance of the log of the product estimator.

    Returns ``(sum_i gamma_i / N_i, gamma, degenerate)`` where ``gamma_i =
    N_i sum w^2 / (sum w)^2 - 1``. Weights are given on the log scale, flat
    and grouped by panel; ``degenerate`` flags panels whose weights are all 0.
    """
    counts = np.asarray(counts, dtype=int)
    _, gamma, ok = _segment_stats(np.asarray(log_weights, dtype=float), counts)
    return float(np.sum(gamma / counts)), gamma, bool(np.any(~ok))


def panel_is_estimate(
    data: GlmmData, theta, n_particles, rng, cond_loglik: Callable | None = None
) -> LogLikEstimate:
    """Unbiased estimate of ``prod_i p(y_i | theta)`` using the prior as proposal."""
    log_w, counts = panel_weights(data, theta, n_particles, rng, cond_loglik)
    log_mean, gamma, ok = _segment_stats(log_w, counts)
    floored = not np.all(ok)
    value = float(np.sum(log_mean)) if not floored else LOG_FLOOR
    var = float(np.sum(gamma / counts))
    return LogLikEstimate(value, counts, var, floored)


def adapt_particles(
    data: GlmmData,
    theta,
    sigma2_target: float,
    pilot_n: int,
    rng,
    max_particles: int = 100_000,
    cond_loglik: Callable | None = None,
) -> np.ndarray:
    """Per-panel counts aiming at ``Var(log p_hat) ~= sigma2_target``.

    A pilot of ``pilot_n`` draws per panel gives ``gamma_i``; then
    ``N_i = max(2, ceil(gamma_i * n / sigma2_target))`` (capped).
    """
    if sigma2_target <= 0:
        raise DomainError("sigma2_target must be positive")
    if pilot_n < 10:
        raise ContractError("pilot_n must be at least 10")
    log_w, counts = panel_weights(data, theta, pilot_n, rng, cond_loglik)
    _, gamma, _ = _segment_stats(log_w, counts)
    n = data.n_panels
    wanted = np.ceil(gamma * n / sigma2_target)
    return np.clip(wanted, 2, max_particles).astype(int)


class PanelISEstimator(LikelihoodEstimator):
    def __init__(self, data: GlmmData, policy: FixedN | TargetSigma2, max_particles=100_000):
        self.data = data
        self.policy = policy
        self.max_particles = max_particles
        self.spec = EstimatorSpec(EstimatorKind.PANEL_IMPORTANCE_SAMPLING, policy)

    def with_policy(self, policy) -> "PanelISEstimator":
        return PanelISEstimator(self.data, policy, self.max_particles)

    def particle_counts(self, theta, rng) -> np.ndarray:
        if isinstance(self.policy, TargetSigma2):
            return adapt_particles(
                self.data, theta, self.policy.sigma2, self.policy.pilot_n, rng, self.max_particles
            )
        counts = np.asarray(self.policy.n, dtype=int)
        return np.broadcast_to(counts, (self.data.n_panels,)).copy()

    def estimate(self, theta, rng):
        counts = self.particle_counts(theta, rng)
        return panel_is_estimate(self.data, theta, counts, rng)


class PanelCountsPolicy(FixedN):
    """Fixed per-panel particle counts (one entry per panel)."""

    def __init__(self, counts):
        object.__setattr__(self, "n", np.asarray(counts, dtype=int))

    def __hash__(self):
        return hash(self.n.tobytes())

    def __eq__(self, other):
        return isinstance(other, PanelCountsPolicy) and np.array_equal(self.n, other.n)
