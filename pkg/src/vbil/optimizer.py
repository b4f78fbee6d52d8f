"""Robbins-Monro optimisation of the variational parameters.

Each iteration draws ``S`` parameter values from the current variational
density (RQMC or plain MC uniforms), estimates the likelihood at each, forms a
control-variate score-function gradient (optionally factorised and
preconditioned by the inverse Fisher information) and takes a step of size
``a_t``. Progress is monitored through a windowed average of the scaled lower
bound.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import Executor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Protocol

import numpy as np

from . import rqmc
from .errors import ConditioningError, ConfigError, InvalidStateError, NumericalAbort
from .expfam import ProductFamily
from .gradient import (
    CvState,
    SampleSet,
    clip,
    cv_gradient,
    natural_transform,
    update_cv_constants,
)
from .likelihood.base import LikelihoodEstimator
from .likelihood.synthetic import SyntheticNoiseEstimator

log = logging.getLogger(__name__)

MAX_FALLBACKS = 5


class VbilModel(Protocol):
    """What the optimiser needs from a model definition."""

    estimator: LikelihoodEstimator
    n_obs: int

    def log_prior_blocks(self, thetas: np.ndarray) -> np.ndarray:
        ...


@dataclass(frozen=True)
class StepSchedule:
    """``a_t = scale * (1 + t) ** -kappa``."""

    scale: float = 1.0
    kappa: float = 1.0

    def __post_init__(self):
        if not (0.5 < self.kappa <= 1.0):
            raise ConfigError(f"kappa must lie in (0.5, 1], got {self.kappa}")
        if not self.scale > 0:
            raise ConfigError("step scale must be positive")


def step_size(t: int, schedule: StepSchedule | None = None) -> float:
    if t < 0:
        raise ConfigError("iteration index must be non-negative")
    schedule = schedule or StepSchedule()
    return schedule.scale * (1.0 + t) ** -schedule.kappa


@dataclass(frozen=True)
class VbilConfig:
    S: int = 500
    step: StepSchedule = StepSchedule()
    natural: bool = True
    control_variates: bool = True
    factorized: bool = False
    rqmc: bool = True
    stop_window: int = 5
    stop_epsilon: float = 1e-5
    scale_n: int | None = None
    max_iterations: int = 500
    min_iterations: int = 0
    seed: int = 0
    cv_pilot: bool = True
    max_halvings: int = 30
    use_stopping: bool = True

    def __post_init__(self):
        if self.S < 2:
            raise ConfigError("S must be at least 2")
        if self.stop_window < 1:
            raise ConfigError("stop window must be at least 1")
        if not self.stop_epsilon > 0:
            raise ConfigError("stop epsilon must be positive")
        if self.max_iterations < 0:
            raise ConfigError("max_iterations must be non-negative")


class StopReason(str, Enum):
    WINDOW_CONVERGED = "WindowConverged"
    MAX_ITERATIONS = "MaxIterations"


@dataclass
class IterationRecord:
    t: int
    lam: np.ndarray
    lb_hat: float
    lb_scaled: float
    lb_window_avg: float
    step: float
    clipped: bool = False
    fallback: bool = False
    halvings: int = 0
    projected: bool = False


@dataclass
class FitTrace:
    iterations: list[IterationRecord] = field(default_factory=list)
    stop_reason: StopReason = StopReason.MAX_ITERATIONS
    final_family: ProductFamily | None = None
    final_log_marginal_likelihood_estimate: float = float("nan")
    elapsed_seconds: float = 0.0
    likelihood_evaluations: int = 0

    @property
    def final_lambda(self) -> np.ndarray:
        return self.final_family.lam

    @property
    def lb_scaled(self) -> np.ndarray:
        return np.array([r.lb_scaled for r in self.iterations])

    def lambdas(self) -> np.ndarray:
        return np.array([r.lam for r in self.iterations])


def estimate_lower_bound(samples: SampleSet) -> float:
    """Sample mean of ``log p(theta) + log p_hat(y|theta) - log q(theta)``.

    With noisy likelihoods this targets ``E[log p_hat]``, which sits
    ``sigma^2 / 2`` below the exact-likelihood bound.
    """
    return float(np.mean(samples.h - samples.log_q))


def window_average(values, M: int) -> float:
    values = np.asarray(values, dtype=float)
    if values.shape[0] < M:
        return float("nan")
    return float(np.mean(values[-M:]))


def check_stopping(lb_scaled, M: int = 5, epsilon: float = 1e-5) -> bool:
    """True when the M-window mean of the scaled bound moved by less than
    ``epsilon`` since the previous iteration (needs ``M + 1`` values)."""
    lb = np.asarray(lb_scaled, dtype=float)
    if lb.shape[0] < M + 1:
        return False
    return abs(window_average(lb, M) - window_average(lb[:-1], M)) < epsilon


def _iteration_seed(seed: int, t: int) -> np.random.SeedSequence:
    # key 0 is reserved for the control-variate pilot
    return np.random.SeedSequence(seed, spawn_key=(t + 1,))


def draw_samples(
    model: VbilModel,
    family: ProductFamily,
    S: int,
    seed: np.random.SeedSequence,
    use_rqmc: bool,
    executor: Executor | None = None,
) -> SampleSet:
    point_seed, lik_seed = seed.spawn(2)
    gen = rqmc.Generator.SOBOL_DIGITAL_SHIFT if use_rqmc else rqmc.Generator.PLAIN_MONTE_CARLO
    u = rqmc.generate(S, family.n_uniforms, gen, np.random.default_rng(point_seed)).points
    thetas = family.sample(u)
    batch = model.estimator.estimate_batch(thetas, lik_seed, executor)
    return SampleSet.build(family, thetas, batch.log_values, model.log_prior_blocks(thetas))


def _take_step(family: ProductFamily, direction, a, max_halvings):
    lam = family.lam
    halvings = 0
    while halvings <= max_halvings:
        new = lam - a * direction
        if family.is_valid(new):
            return family.with_lambda(new), halvings, False
        a *= 0.5
        halvings += 1
    new = family.project(lam - a * direction)
    if not family.is_valid(new):
        raise InvalidStateError("projection failed to restore a valid variational parameter")
    return family.with_lambda(new), halvings, True


def run_vbil(
    model: VbilModel,
    family: ProductFamily,
    config: VbilConfig,
    executor: Executor | None = None,
    callback: Callable[[IterationRecord], None] | None = None,
) -> FitTrace:
    """Fit ``family`` to the posterior of ``model``.

    Returns a :class:`FitTrace` whose ``final_family`` holds the fitted
    parameters. Results depend only on ``config.seed``, not on ``executor``.
    """
    start = time.perf_counter()
    scale_n = config.scale_n or getattr(model, "n_obs", 1) or 1
    trace = FitTrace(final_family=family)
    cv = CvState.zeros(family.n_params)
    if config.max_iterations == 0:
        trace.elapsed_seconds = time.perf_counter() - start
        return trace
    if config.control_variates and config.cv_pilot:
        pilot = draw_samples(
            model, family, config.S, np.random.SeedSequence(config.seed, spawn_key=(0,)),
            config.rqmc, executor,
        )
        trace.likelihood_evaluations += config.S
        cv = update_cv_constants(family, pilot, cv, config.factorized)

    lbs: list[float] = []
    fallbacks = 0
    for t in range(config.max_iterations):
        samples = draw_samples(model, family, config.S, _iteration_seed(config.seed, t), config.rqmc, executor)
        trace.likelihood_evaluations += config.S
        lb = estimate_lower_bound(samples)
        lbs.append(lb / scale_n)
        active = cv if config.control_variates else CvState.zeros(family.n_params)
        grad = cv_gradient(family, samples, active, config.factorized).grad
        if config.control_variates:
            cv = update_cv_constants(family, samples, cv, config.factorized)

        fallback = False
        direction = grad
        if config.natural:
            try:
                direction = natural_transform(family, grad)
                fallbacks = 0
            except ConditioningError as exc:
                fallbacks += 1
                fallback = True
                log.warning("iteration %d: %s; using the plain gradient", t, exc)
                if fallbacks >= MAX_FALLBACKS:
                    raise NumericalAbort(
                        f"Fisher information ill-conditioned for {fallbacks} consecutive "
                        f"iterations at lambda={family.lam}"
                    ) from exc
        direction, clipped = clip(direction)
        a = step_size(t, config.step)
        record = IterationRecord(
            t, family.lam.copy(), lb, lb / scale_n, window_average(lbs, config.stop_window), a,
            clipped, fallback,
        )
        family, record.halvings, record.projected = _take_step(family, direction, a, config.max_halvings)
        trace.iterations.append(record)
        if callback is not None:
            callback(record)
        log.debug("iter %d lb/n=%.6f lam=%s", t, lb / scale_n, family.lam)
        if (
            config.use_stopping
            and t + 1 >= config.min_iterations
            and check_stopping(lbs, config.stop_window, config.stop_epsilon)
        ):
            trace.stop_reason = StopReason.WINDOW_CONVERGED
            break

    trace.final_family = family
    M = min(config.stop_window, len(lbs))
    trace.final_log_marginal_likelihood_estimate = float(np.mean(lbs[-M:])) * scale_n
    trace.elapsed_seconds = time.perf_counter() - start
    return trace


# ---------------------------------------------------------------------------
# noise-variance study


@dataclass
class NoiseModel:
    """Wraps a model with an exact likelihood so its estimator adds lognormal noise."""

    base: VbilModel
    estimator: LikelihoodEstimator
    n_obs: int

    def log_prior_blocks(self, thetas):
        return self.base.log_prior_blocks(thetas)


def with_synthetic_noise(model, exact_loglik: Callable, sigma2: float) -> NoiseModel:
    return NoiseModel(model, SyntheticNoiseEstimator(exact_loglik, sigma2), getattr(model, "n_obs", 1))


@dataclass
class Theorem1Report:
    sigma2: np.ndarray
    variances: np.ndarray  # (len(sigma2), P)
    slope: np.ndarray
    intercept: np.ndarray
    r_squared: np.ndarray
    final_lambdas: np.ndarray  # (len(sigma2), replications, P)


def linear_fit(x, y) -> tuple[float, float, float]:
    """Least-squares line ``y ~ a + b x``; returns ``(b, a, R^2)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    b, a = np.polyfit(x, y, 1)
    resid = y - (a + b * x)
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 1.0
    return float(b), float(a), float(r2)


def theorem1_variance_study(
    model,
    exact_loglik: Callable,
    family: ProductFamily,
    sigma2_grid,
    replications: int,
    config: VbilConfig,
    progress: Callable[[float, int], None] | None = None,
) -> Theorem1Report:
    """Run a fixed-budget fit ``replications`` times per noise level and
    regress the across-replication variance of the final lambda on sigma^2."""
    sigma2_grid = np.asarray(sigma2_grid, dtype=float)
    cfg = replace(config, use_stopping=False)
    finals = np.empty((sigma2_grid.shape[0], replications, family.n_params))
    for i, s2 in enumerate(sigma2_grid):
        noisy = with_synthetic_noise(model, exact_loglik, s2)
        for r in range(replications):
            fit = run_vbil(noisy, family, replace(cfg, seed=config.seed + r))
            finals[i, r] = fit.final_lambda
            if progress is not None:
                progress(s2, r)
    variances = finals.var(axis=1, ddof=1)
    fits = [linear_fit(sigma2_grid, variances[:, j]) for j in range(family.n_params)]
    slope, intercept, r2 = (np.array(v) for v in zip(*fits))
    return Theorem1Report(sigma2_grid, variances, slope, intercept, r2, finals)


@dataclass
class KlDecompositionRow:
    sigma2: float
    kl_minus_half_sigma2: float
    se: float


def kl_decomposition_check(
    model, exact_loglik: Callable, log_evidence: float, family: ProductFamily, sigma2_grid,
    n_samples: int, seed: int = 0,
) -> list[KlDecompositionRow]:
    """Monte Carlo estimate of ``KL(lambda) - sigma^2/2`` on the augmented space.

    ``KL(lambda) = E[log q - log p(theta) - log p_hat] + log p(y)``; it should
    not depend on sigma^2 once the ``sigma^2/2`` offset is removed.
    """
    rows = []
    for k, s2 in enumerate(np.asarray(sigma2_grid, dtype=float)):
        noisy = with_synthetic_noise(model, exact_loglik, s2)
        ss = np.random.SeedSequence(seed, spawn_key=(k,))
        samples = draw_samples(noisy, family, n_samples, ss, use_rqmc=False)
        terms = samples.log_q - samples.h + log_evidence - 0.5 * s2
        rows.append(KlDecompositionRow(float(s2), float(terms.mean()), float(terms.std(ddof=1) / np.sqrt(n_samples))))
    return rows
