"""Shared types for unbiased likelihood estimators."""

from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from concurrent.futures import Executor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

from ..errors import ConfigError

log = logging.getLogger(__name__)

# log-likelihood reported when the averaged weights are exactly zero
LOG_FLOOR = -1e6


@dataclass(frozen=True)
class LogLikEstimate:
    """One evaluation of ``log p_hat_N(y | theta)``."""

    log_value: float
    particles_used: int | np.ndarray
    var_log_estimate: float | None = None
    floored: bool = False


@dataclass
class EstimateBatch:
    """Estimates for a batch of parameter draws, stored column-wise."""

    log_values: np.ndarray
    var_log: np.ndarray
    particles: list = field(default_factory=list)
    floored: np.ndarray | None = None

    def __post_init__(self):
        if self.floored is None:
            self.floored = np.zeros(self.log_values.shape[0], dtype=bool)

    def __len__(self):
        return self.log_values.shape[0]

    def __getitem__(self, s) -> LogLikEstimate:
        var = self.var_log[s]
        return LogLikEstimate(
            float(self.log_values[s]),
            self.particles[s] if self.particles else 0,
            None if np.isnan(var) else float(var),
            bool(self.floored[s]),
        )

    @classmethod
    def from_estimates(cls, estimates) -> "EstimateBatch":
        estimates = list(estimates)
        return cls(
            np.array([e.log_value for e in estimates], dtype=float),
            np.array(
                [np.nan if e.var_log_estimate is None else e.var_log_estimate for e in estimates]
            ),
            [e.particles_used for e in estimates],
            np.array([e.floored for e in estimates], dtype=bool),
        )


def log_mean_exp(log_w: np.ndarray, axis=-1) -> np.ndarray:
    """``log(mean(exp(log_w)))`` without overflow; -inf where all weights are 0."""
    log_w = np.asarray(log_w, dtype=float)
    m = np.max(log_w, axis=axis, keepdims=True)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.mean(np.exp(log_w - safe), axis=axis, keepdims=True)) + safe
    return np.squeeze(out, axis=axis)


def floor_log_value(value: float, what: str = "estimate") -> tuple[float, bool]:
    if np.isfinite(value):
        return float(value), False
    if value > 0:
        raise FloatingPointError(f"{what} overflowed to +inf")
    log.debug("%s underflowed; applying floor %g", what, LOG_FLOOR)
    return LOG_FLOOR, True


class EstimatorKind(str, Enum):
    EXACT = "Exact"
    PANEL_IMPORTANCE_SAMPLING = "PanelImportanceSampling"
    BOOTSTRAP_PARTICLE_FILTER = "BootstrapParticleFilter"
    ABC_KERNEL = "AbcKernel"
    MARGINAL_REFINEMENT = "MarginalRefinement"
    SYNTHETIC_GAUSSIAN_NOISE = "SyntheticGaussianNoise"


@dataclass(frozen=True)
class FixedN:
    n: int


@dataclass(frozen=True)
class TargetSigma2:
    sigma2: float
    pilot_n: int = 20


_VARIANCE_AWARE = {EstimatorKind.PANEL_IMPORTANCE_SAMPLING, EstimatorKind.SYNTHETIC_GAUSSIAN_NOISE}


@dataclass(frozen=True)
class EstimatorSpec:
    kind: EstimatorKind
    particle_policy: FixedN | TargetSigma2 | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", EstimatorKind(self.kind))
        if isinstance(self.particle_policy, TargetSigma2) and self.kind not in _VARIANCE_AWARE:
            raise ConfigError(
                f"{self.kind.value} exposes no variance estimate; TargetSigma2 is not allowed"
            )


class LikelihoodEstimator(ABC):
    """Callable producing unbiased likelihood estimates at parameter draws.

    Subclasses implement :meth:`estimate` for one draw; vectorised estimators
    may also override :meth:`estimate_batch`.
    """

    spec: EstimatorSpec

    @abstractmethod
    def estimate(self, theta: np.ndarray, rng: np.random.Generator) -> LogLikEstimate:
        ...

    def estimate_batch(
        self,
        thetas: np.ndarray,
        seed: np.random.SeedSequence,
        executor: Executor | None = None,
    ) -> EstimateBatch:
        """Evaluate every row of ``thetas``; each row gets its own child seed,
        so results do not depend on how work is spread over workers."""
        thetas = np.atleast_2d(thetas)
        children = seed.spawn(thetas.shape[0])

        def one(i):
            return self.estimate(thetas[i], np.random.default_rng(children[i]))

        if executor is None:
            results = [one(i) for i in range(thetas.shape[0])]
        else:
            results = list(executor.map(one, range(thetas.shape[0])))
        return EstimateBatch.from_estimates(results)


class ExactEstimator(LikelihoodEstimator):
    """Wraps a tractable vectorised log-likelihood ``f(thetas) -> (S,)``."""

    spec = EstimatorSpec(EstimatorKind.EXACT)

    def __init__(self, log_lik: Callable[[np.ndarray], np.ndarray]):
        self.log_lik = log_lik

    def estimate(self, theta, rng=None):
        value = float(np.atleast_1d(self.log_lik(np.atleast_2d(theta)))[0])
        value, floored = floor_log_value(value)
        return LogLikEstimate(value, 0, 0.0, floored)

    def estimate_batch(self, thetas, seed=None, executor=None):
        values = np.asarray(self.log_lik(np.atleast_2d(thetas)), dtype=float)
        floored = ~np.isfinite(values)
        values = np.where(floored, LOG_FLOOR, values)
        return EstimateBatch(values, np.zeros_like(values), [], floored)
