"""Two-component normal mixture: a factorised pilot fit and refinement of
the marginal posterior of the mixing weight.

Parameters are ordered ``(omega, mu1, mu2, s1, s2)`` with ``s_k`` the
component variances.
"""

from __future__ import annotations

import numpy as np
from scipy import special, stats

from ..errors import NumericalAbort
from ..expfam import BetaFactor, InverseGammaFactor, MvnFactor, ProductFamily
from ..likelihood.base import ExactEstimator
from ..likelihood.refine import MarginalRefineEstimator
from .base import ModelSpec, Transform, normal_prior, truncated_jeffreys_prior, uniform_prior

NAMES = ["omega", "mu1", "mu2", "sigma2_1", "sigma2_2"]
VAR_BOUNDS = (1e-6, 1e6)


def mixture_simulate(n, rng, omega=0.3, mu=(-3.0, 3.0), var=(2.0, 3.0)) -> np.ndarray:
    first = rng.random(n) < omega
    means = np.where(first, mu[0], mu[1])
    sds = np.sqrt(np.where(first, var[0], var[1]))
    return means + sds * rng.standard_normal(n)


def mixture_loglik(y):
    y = np.asarray(y, dtype=float)

    def loglik(thetas):
        t = np.atleast_2d(thetas)
        w, m1, m2, v1, v2 = (t[:, k : k + 1] for k in range(5))
        with np.errstate(divide="ignore", invalid="ignore"):
            l1 = np.log(w) - 0.5 * np.log(2 * np.pi * v1) - 0.5 * (y - m1) ** 2 / v1
            l2 = np.log1p(-w) - 0.5 * np.log(2 * np.pi * v2) - 0.5 * (y - m2) ** 2 / v2
        return np.sum(np.logaddexp(l1, l2), axis=1)

    return loglik


def _rest_priors():
    return [normal_prior([0.0, 0.0], [100.0, 100.0]), truncated_jeffreys_prior(*VAR_BOUNDS), truncated_jeffreys_prior(*VAR_BOUNDS)]


def mixture_em(y, n_iter: int = 500, tol: float = 1e-10) -> np.ndarray:
    """Maximum-likelihood ``(omega, mu1, mu2, s1, s2)`` by EM, started from
    the quartiles and ordered so that ``mu1 <= mu2``."""
    y = np.asarray(y, dtype=float)
    lo, hi = np.quantile(y, [0.25, 0.75])
    v0 = max(np.var(y) / 4.0, 1e-3)
    w, m1, m2, v1, v2 = 0.5, lo, hi, v0, v0
    prev = -np.inf
    for _ in range(n_iter):
        l1 = np.log(w) + stats.norm.logpdf(y, m1, np.sqrt(v1))
        l2 = np.log1p(-w) + stats.norm.logpdf(y, m2, np.sqrt(v2))
        ll = np.sum(np.logaddexp(l1, l2))
        r = special.expit(l1 - l2)
        n1 = np.clip(r.sum(), 1e-3, y.shape[0] - 1e-3)
        n2 = y.shape[0] - n1
        w = n1 / y.shape[0]
        m1 = np.sum(r * y) / n1
        m2 = np.sum((1 - r) * y) / n2
        v1 = max(np.sum(r * (y - m1) ** 2) / n1, 1e-3)
        v2 = max(np.sum((1 - r) * (y - m2) ** 2) / n2, 1e-3)
        if ll - prev < tol:
            break
        prev = ll
    if m1 > m2:
        w, m1, m2, v1, v2 = 1 - w, m2, m1, v2, v1
    return np.array([w, m1, m2, v1, v2])


def mixture_initial_family(y) -> ProductFamily:
    """Factors centred on the EM estimate with roughly posterior-sized spread."""
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    w, m1, m2, v1, v2 = mixture_em(y)
    n1, n2 = max(w * n, 2.0), max((1 - w) * n, 2.0)
    return ProductFamily(
        [
            BetaFactor.from_shapes(w * n / 2 + 1, (1 - w) * n / 2 + 1),
            MvnFactor.from_moments([m1, m2], np.diag([2 * v1 / n1, 2 * v2 / n2])),
            InverseGammaFactor.from_shapes(n1 / 4 + 2, v1 * (n1 / 4 + 1)),
            InverseGammaFactor.from_shapes(n2 / 4 + 2, v2 * (n2 / 4 + 1)),
        ],
        blocks=[[0], [1, 2], [3], [4]],
    )


def mixture_pilot_spec(y, family: ProductFamily | None = None) -> ModelSpec:
    """Factorised fit ``q(omega) q(mu1, mu2) q(s1) q(s2)`` with the exact likelihood."""
    loglik = mixture_loglik(y)
    return ModelSpec(
        name="mixture_pilot",
        param_names=list(NAMES),
        family=family or mixture_initial_family(y),
        estimator=ExactEstimator(loglik),
        prior_blocks=[uniform_prior()] + _rest_priors(),
        n_obs=len(y),
        transform=Transform(("logit", "identity", "identity", "log", "log")),
        exact_loglik=loglik,
    )


def nuisance_proposal(pilot: ProductFamily, tail_scale: float = 1.5) -> ProductFamily:
    """Pilot factors for ``(mu1, mu2, s1, s2)``, tempered by ``tail_scale``."""
    rest = ProductFamily(pilot.factors[1:], blocks=[[0, 1], [2], [3]])
    _, sd = rest.moments()
    if np.any(~np.isfinite(sd)) or np.any(sd < 1e-6):
        raise NumericalAbort(f"pilot fit is degenerate (nuisance sds {sd})")
    return rest.tempered(tail_scale)


def mixture_refine_spec(
    y, pilot: ProductFamily, tail_scale: float = 1.5, n_draws: int = 200
) -> ModelSpec:
    """Refine ``q(omega)`` against ``p(y | omega)``, which integrates the
    other parameters out by importance sampling from the tempered pilot."""
    loglik = mixture_loglik(y)
    priors = _rest_priors()

    def prior_rest(rest, _omega):
        return priors[0](rest[:, :2]) + priors[1](rest[:, 2:3]) + priors[2](rest[:, 3:4])

    proposal = nuisance_proposal(pilot, tail_scale)
    start = pilot.factors[0]
    return ModelSpec(
        name="mixture_refine",
        param_names=["omega"],
        family=ProductFamily([BetaFactor(start.lam)]),
        estimator=MarginalRefineEstimator(loglik, proposal, prior_rest, n_draws),
        prior_blocks=[uniform_prior()],
        n_obs=len(y),
        transform=Transform(("logit",)),
        extras={"tail_scale": tail_scale},
    )


def mixture_gibbs(y, n_iter: int, burn_in: int, rng, init=None, order: bool = True) -> dict:
    """Data-augmentation Gibbs sampler under the same (truncated) priors.

    The priors are exchangeable in the labels, so with ``order`` the kept
    draws are relabelled to satisfy ``mu1 < mu2``.

    Returns the post-burn-in draws and the conditional Beta shapes of omega,
    whose average density is a Rao-Blackwellised estimate of ``p(omega | y)``.
    """
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    if init is None:
        init = mixture_em(y)
    w, m1, m2, v1, v2 = map(float, init)
    keep = n_iter - burn_in
    draws = np.empty((keep, 5))
    shapes = np.empty((keep, 2))
    lo_v, hi_v = VAR_BOUNDS
    for it in range(n_iter):
        l1 = np.log(w) + stats.norm.logpdf(y, m1, np.sqrt(v1))
        l2 = np.log1p(-w) + stats.norm.logpdf(y, m2, np.sqrt(v2))
        p1 = special.expit(l1 - l2)
        z = rng.random(n) < p1
        n1 = int(z.sum())
        n2 = n - n1
        a, b = 1.0 + n1, 1.0 + n2
        w = rng.beta(a, b)
        ms, vs = [], []
        for mask, nk, v in ((z, n1, v1), (~z, n2, v2)):
            prec = 1.0 / 100.0 + nk / v
            mean = y[mask].sum() / v / prec
            m = mean + rng.standard_normal() / np.sqrt(prec)
            ss = np.sum((y[mask] - m) ** 2)
            if nk == 0:
                v_new = np.exp(rng.uniform(np.log(lo_v), np.log(hi_v)))
            else:
                while True:
                    v_new = 0.5 * ss / rng.gamma(0.5 * nk)
                    if lo_v <= v_new <= hi_v:
                        break
            ms.append(m)
            vs.append(v_new)
        m1, m2 = ms
        v1, v2 = vs
        if it >= burn_in:
            if order and m1 > m2:
                # report under the labelling mu1 < mu2
                draws[it - burn_in] = (1 - w, m2, m1, v2, v1)
                shapes[it - burn_in] = (b, a)
            else:
                draws[it - burn_in] = (w, m1, m2, v1, v2)
                shapes[it - burn_in] = (a, b)
    return {"draws": draws, "omega_shapes": shapes}


def rao_blackwell_density(shapes: np.ndarray, grid: np.ndarray, chunk: int = 2000) -> np.ndarray:
    """Average of ``Beta(a_i, b_i)`` densities on ``grid``."""
    total = np.zeros_like(grid)
    for s in range(0, shapes.shape[0], chunk):
        a = shapes[s : s + chunk, 0:1]
        b = shapes[s : s + chunk, 1:2]
        total += np.exp(stats.beta.logpdf(grid[None, :], a, b)).sum(axis=0)
    return total / shapes.shape[0]


def kl_to_density(log_q: np.ndarray, p: np.ndarray, grid: np.ndarray) -> float:
    """``KL(q || p)`` on a 1-D grid by the trapezoidal rule."""
    q = np.exp(log_q)
    with np.errstate(divide="ignore", invalid="ignore"):
        integrand = np.where(q > 0, q * (log_q - np.log(p)), 0.0)
    return float(np.trapezoid(integrand, grid))
