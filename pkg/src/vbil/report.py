"""Marginal summaries of a fitted variational density.

Reported quantities are coordinate-wise monotone functions of theta (such as
``phi = 2 tau - 1``), so each reported marginal follows from the matching
coordinate marginal of ``q`` by a change of variables.
"""

from __future__ import annotations

from typing import Callable

import numpy as np
from scipy import stats

from .errors import ContractError
from .expfam import BetaFactor, InverseGammaFactor, MvnFactor, ProductFamily


def coordinate_marginals(family: ProductFamily) -> list:
    """Frozen scipy distribution of each theta coordinate under ``q``."""
    out = [None] * family.dim_theta
    for f, block in zip(family.factors, family.blocks):
        if isinstance(f, BetaFactor):
            out[block[0]] = stats.beta(f.alpha, f.beta)
        elif isinstance(f, InverseGammaFactor):
            out[block[0]] = stats.invgamma(f.a, scale=f.b)
        elif isinstance(f, MvnFactor):
            mu, sd = f.mu, np.sqrt(np.diag(f.sigma))
            for i, j in enumerate(block):
                out[j] = stats.norm(mu[i], sd[i])
        else:
            raise ContractError(f"no marginal for factor kind {f.kind}")
    return out


def reported_moments(
    family: ProductFamily, report: Callable | None = None, n_draws: int = 100_000, seed: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Mean and sd of the reported parameters.

    Exact when there is no report transform, otherwise a seeded Monte Carlo
    estimate from ``n_draws`` draws.
    """
    if report is None:
        return family.moments()
    u = np.random.default_rng(seed).random((n_draws, family.n_uniforms))
    r = report(family.sample(u))
    return r.mean(axis=0), r.std(axis=0, ddof=1)


def density_grid(
    family: ProductFamily, report: Callable | None = None, n_grid: int = 512, tail: float = 1e-4
) -> list[tuple[np.ndarray, np.ndarray]]:
    """``(x, density)`` of every reported marginal on ``n_grid`` points
    spanning the ``tail`` and ``1 - tail`` quantiles."""
    marginals = coordinate_marginals(family)
    centre = np.array([m.median() for m in marginals])
    out = []
    for j, m in enumerate(marginals):
        x = np.linspace(m.ppf(tail), m.ppf(1.0 - tail), n_grid)
        dens = m.pdf(x)
        if report is not None:
            rows = np.tile(centre, (n_grid, 1))
            rows[:, j] = x
            r = report(rows)[:, j]
            jac = np.abs(np.gradient(r, x))
            order = np.argsort(r)
            x, dens = r[order], (dens / jac)[order]
        out.append((x, dens))
    return out
