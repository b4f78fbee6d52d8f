"""Model definitions: prior, variational layout, estimator and transforms."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy import special, stats

from ..errors import ContractError
from ..expfam import ProductFamily
from ..likelihood.base import LikelihoodEstimator


@dataclass(frozen=True)
class Transform:
    """Coordinate-wise bijection from the parameter space to R^d.

    ``kinds[i]`` is ``"identity"``, ``"log"`` (positive reals) or
    ``"logit"`` (the unit interval).
    """

    kinds: tuple[str, ...]

    def __post_init__(self):
        bad = set(self.kinds) - {"identity", "log", "logit"}
        if bad:
            raise ContractError(f"unknown transform kinds {bad}")

    def to_unconstrained(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        out = theta.copy()
        for i, k in enumerate(self.kinds):
            if k == "log":
                out[..., i] = np.log(theta[..., i])
            elif k == "logit":
                out[..., i] = special.logit(theta[..., i])
        return out

    def to_constrained(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        out = u.copy()
        for i, k in enumerate(self.kinds):
            if k == "log":
                out[..., i] = np.exp(u[..., i])
            elif k == "logit":
                out[..., i] = special.expit(u[..., i])
        return out

    def log_jacobian(self, u) -> np.ndarray:
        """``log |d theta / d u|`` summed over coordinates."""
        u = np.asarray(u, dtype=float)
        total = np.zeros(u.shape[:-1])
        for i, k in enumerate(self.kinds):
            if k == "log":
                total = total + u[..., i]
            elif k == "logit":
                total = total - np.logaddexp(0.0, u[..., i]) - np.logaddexp(0.0, -u[..., i])
        return total


@dataclass
class ModelSpec:
    """Everything needed to fit one posterior.

    ``prior_blocks[k]`` evaluates the log prior of the coordinates in the
    family's ``k``-th block, vectorised over rows.
    """

    name: str
    param_names: list[str]
    family: ProductFamily
    estimator: LikelihoodEstimator
    prior_blocks: Sequence[Callable[[np.ndarray], np.ndarray]]
    n_obs: int
    transform: Transform
    exact_loglik: Callable[[np.ndarray], np.ndarray] | None = None
    report: Callable[[np.ndarray], np.ndarray] | None = None
    report_names: list[str] | None = None
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.prior_blocks) != self.family.n_factors:
            raise ContractError("one prior evaluator per family block is required")
        if len(self.param_names) != self.family.dim_theta:
            raise ContractError("parameter names do not match the family dimension")

    @property
    def dim(self) -> int:
        return self.family.dim_theta

    def log_prior_blocks(self, thetas) -> np.ndarray:
        thetas = np.atleast_2d(thetas)
        return np.column_stack(
            [np.asarray(p(thetas[:, b]), dtype=float).reshape(-1) for p, b in zip(self.prior_blocks, self.family.blocks)]
        )

    def log_prior(self, thetas) -> np.ndarray:
        return self.log_prior_blocks(thetas).sum(axis=1)

    def with_estimator(self, estimator: LikelihoodEstimator) -> "ModelSpec":
        return replace(self, estimator=estimator)

    def with_family(self, family: ProductFamily) -> "ModelSpec":
        return replace(self, family=family)

    def reported(self, thetas) -> np.ndarray:
        thetas = np.atleast_2d(thetas)
        return thetas if self.report is None else self.report(thetas)

    @property
    def reported_names(self) -> list[str]:
        return self.report_names or self.param_names


# prior building blocks, each mapping an (S, d) block to (S,)


def normal_prior(mean, var) -> Callable:
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    var = np.atleast_1d(np.asarray(var, dtype=float))

    def logpdf(x):
        x = np.atleast_2d(x)
        return np.sum(stats.norm.logpdf(x, mean, np.sqrt(var)), axis=1)

    return logpdf


def beta_prior(a, b) -> Callable:
    def logpdf(x):
        x = np.atleast_2d(x)[:, 0]
        with np.errstate(divide="ignore"):
            return stats.beta.logpdf(x, a, b)

    return logpdf


def inverse_gamma_prior(a, b) -> Callable:
    def logpdf(x):
        return stats.invgamma.logpdf(np.atleast_2d(x)[:, 0], a, scale=b)

    return logpdf


def gamma_prior(shape, rate) -> Callable:
    def logpdf(x):
        return stats.gamma.logpdf(np.atleast_2d(x)[:, 0], shape, scale=1.0 / rate)

    return logpdf


def uniform_prior() -> Callable:
    def logpdf(x):
        x = np.atleast_2d(x)[:, 0]
        return np.where((x > 0) & (x < 1), 0.0, -np.inf)

    return logpdf


def truncated_jeffreys_prior(lo: float = 1e-6, hi: float = 1e6) -> Callable:
    """``p(s) proportional to 1/s`` on ``[lo, hi]``, normalised."""
    norm = np.log(np.log(hi / lo))

    def logpdf(x):
        x = np.atleast_2d(x)
        inside = np.all((x >= lo) & (x <= hi), axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            val = np.sum(-np.log(x) - norm, axis=1)
        return np.where(inside, val, -np.inf)

    return logpdf
