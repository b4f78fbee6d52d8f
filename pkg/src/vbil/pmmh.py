"""Pseudo-marginal Metropolis-Hastings with adaptive random-walk proposals.

The chain moves in the unconstrained coordinates of the model's
:class:`~vbil.models.base.Transform` (with the Jacobian in the target).
The likelihood estimate at the current point is stored and reused, never
refreshed. From ``adapt_start`` until the end of burn-in the proposal
covariance is ``2.38^2 / d (C + eps I)`` with ``C`` the covariance of the
chain history; afterwards it is frozen.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import stats

from .errors import ContractError, NumericalAbort
from .likelihood.base import LikelihoodEstimator

log = logging.getLogger(__name__)


@dataclass
class PmmhChain:
    draws: np.ndarray  # (iterations, d), constrained parameters
    log_lik: np.ndarray  # stored estimate after each iteration
    accepted: np.ndarray
    burn_in: int
    proposal_cov: np.ndarray
    param_names: list[str]
    elapsed_seconds: float = 0.0

    @property
    def acceptance_rate(self) -> float:
        return float(np.mean(self.accepted[self.burn_in :])) if self.draws.shape[0] > self.burn_in else float("nan")

    @property
    def kept(self) -> np.ndarray:
        return self.draws[self.burn_in :]

    @property
    def stored_log_lik(self) -> float:
        return float(self.log_lik[-1])


class _Welford:
    def __init__(self, d):
        self.n = 0
        self.mean = np.zeros(d)
        self.m2 = np.zeros((d, d))

    def push(self, x):
        self.n += 1
        delta = x - self.mean
        self.mean += delta / self.n
        self.m2 += np.outer(delta, x - self.mean)

    @property
    def cov(self):
        return self.m2 / max(self.n - 1, 1)


def run_pmmh(
    model,
    iterations: int,
    burn_in: int,
    seed: int,
    estimator: LikelihoodEstimator | None = None,
    init=None,
    init_cov=None,
    adapt_start: int = 200,
    adapt_eps: float = 1e-6,
    adapt: bool = True,
    max_rejections: int = 1000,
    callback: Callable[[int, np.ndarray, float, bool], None] | None = None,
) -> PmmhChain:
    """Run one chain of ``iterations`` steps (burn-in included).

    ``model`` supplies ``log_prior``, ``transform`` and (by default) the
    estimator; ``init`` is in constrained coordinates, defaulting to the mean
    of ``model.family``. ``init_cov`` is the starting proposal covariance in
    unconstrained coordinates.
    """
    if burn_in >= iterations:
        raise ContractError("burn-in must be shorter than the chain")
    start = time.perf_counter()
    estimator = estimator or model.estimator
    tr = model.transform
    theta = np.asarray(model.family.moments()[0] if init is None else init, dtype=float)
    d = theta.shape[0]
    u = tr.to_unconstrained(theta)
    prop_seed, lik_seed = np.random.SeedSequence(seed).spawn(2)
    prng = np.random.default_rng(prop_seed)
    lrng = np.random.default_rng(lik_seed)

    def log_target_prior(u_):
        th = tr.to_constrained(u_)
        return float(model.log_prior(th[None, :])[0] + tr.log_jacobian(u_)), th

    lp, theta = log_target_prior(u)
    if not np.isfinite(lp):
        raise ContractError(f"initial point {theta} has zero prior density")
    ll = estimator.estimate(theta, lrng).log_value
    cov = np.eye(d) * 0.01 if init_cov is None else np.asarray(init_cov, dtype=float)
    chol = np.linalg.cholesky(cov)
    hist = _Welford(d)
    draws = np.empty((iterations, d))
    lls = np.empty(iterations)
    acc = np.zeros(iterations, dtype=bool)
    rejections = 0
    scale = 2.38**2 / d
    for i in range(iterations):
        u_new = u + chol @ prng.standard_normal(d)
        lp_new, th_new = log_target_prior(u_new)
        log_u = np.log(prng.random())
        accept = False
        if np.isfinite(lp_new):
            ll_new = estimator.estimate(th_new, lrng).log_value
            if log_u < ll_new + lp_new - ll - lp:
                u, theta, lp, ll = u_new, th_new, lp_new, ll_new
                accept = True
        acc[i] = accept
        rejections = 0 if accept else rejections + 1
        if rejections >= max_rejections:
            raise NumericalAbort(
                f"no proposal accepted in {max_rejections} consecutive iterations at theta={theta}"
            )
        draws[i] = theta
        lls[i] = ll
        hist.push(u)
        if adapt and adapt_start <= i < burn_in:
            c = scale * (hist.cov + adapt_eps * np.eye(d))
            try:
                chol = np.linalg.cholesky(c)
                cov = c
            except np.linalg.LinAlgError:
                log.debug("iteration %d: adapted covariance not PD, keeping previous", i)
        if callback is not None:
            callback(i, theta, ll, accept)
    return PmmhChain(draws, lls, acc, burn_in, cov, list(model.param_names), time.perf_counter() - start)


@dataclass
class MarginalSummary:
    name: str
    mean: float
    sd: float
    grid: np.ndarray
    density: np.ndarray


def kde_summary(x, name: str = "", n_grid: int = 512) -> MarginalSummary:
    """Mean, sd and a Silverman-bandwidth Gaussian KDE on ``n_grid`` points.

    A constant sample yields ``sd = 0`` and a spike: one grid cell holding
    all the mass.
    """
    x = np.asarray(x, dtype=float)
    mean = float(x.mean())
    sd = float(x.std(ddof=1)) if x.shape[0] > 1 else 0.0
    if sd == 0.0 or np.ptp(x) == 0.0:
        grid = np.linspace(mean - 0.5, mean + 0.5, n_grid)
        dens = np.zeros(n_grid)
        dx = grid[1] - grid[0]
        dens[n_grid // 2] = 1.0 / dx
        grid[n_grid // 2] = mean
        return MarginalSummary(name, mean, 0.0, grid, dens)
    kde = stats.gaussian_kde(x, bw_method="silverman")
    bw = float(np.sqrt(kde.covariance[0, 0]))
    grid = np.linspace(x.min() - 4 * bw, x.max() + 4 * bw, n_grid)
    return MarginalSummary(name, mean, sd, grid, kde(grid))


def chain_summary(chain: PmmhChain, transform: Callable | None = None, names=None) -> list[MarginalSummary]:
    """Summaries of the post-burn-in draws, optionally after ``transform``."""
    kept = chain.kept
    if kept.shape[0] < 100:
        raise ContractError("need at least 100 post-burn-in draws")
    if transform is not None:
        kept = transform(kept)
    names = names or chain.param_names
    return [kde_summary(kept[:, j], names[j]) for j in range(kept.shape[1])]
