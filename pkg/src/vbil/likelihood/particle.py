"""Bootstrap particle filter likelihood for state-space models.

Models are driven by standard-normal noise so that the same random inputs
can be fed to the generic numpy filter and to the compiled stochastic
volatility kernel. Resampling is multinomial at every step, implemented with
sorted uniforms built from normalised exponential spacings.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass

import numba
import numpy as np

from ..errors import ContractError, DomainError
from .base import (
    LOG_FLOOR,
    EstimatorKind,
    EstimatorSpec,
    FixedN,
    LikelihoodEstimator,
    LogLikEstimate,
)

HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass(frozen=True)
class SsmData:
    y: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if y.shape[0] < 1:
            raise ContractError("time series is empty")
        object.__setattr__(self, "y", y)

    @property
    def T(self) -> int:
        return self.y.shape[0]


class StateSpaceModel(ABC):
    """Scalar-state model ``x_1 ~ mu_theta``, ``x_t | x_{t-1} ~ f``, ``y_t | x_t ~ g``.

    ``initial`` and ``transition`` receive standard-normal noise arrays.
    """

    @abstractmethod
    def initial(self, params, z: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def transition(self, params, x: np.ndarray, z: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def obs_logpdf(self, params, y_t: float, x: np.ndarray) -> np.ndarray:
        ...

    def params(self, theta):
        """Map a parameter vector to the model's native parameters."""
        return np.asarray(theta, dtype=float)


class LinearGaussianSSM(StateSpaceModel):
    """``x_t = phi x_{t-1} + sigma v_t``, ``y_t = x_t + w_t`` with ``w_t ~ N(0, obs_var)``.

    Parameters are ``(phi, sigma2, obs_var)``; ``x_1`` is stationary.
    """

    def params(self, theta):
        phi, sigma2, obs_var = np.asarray(theta, dtype=float)
        if abs(phi) >= 1 or sigma2 <= 0 or obs_var <= 0:
            raise DomainError(f"invalid linear-Gaussian parameters {theta}")
        return phi, sigma2, obs_var

    def initial(self, params, z):
        phi, sigma2, _ = params
        return np.sqrt(sigma2 / (1 - phi * phi)) * z

    def transition(self, params, x, z):
        phi, sigma2, _ = params
        return phi * x + np.sqrt(sigma2) * z

    def obs_logpdf(self, params, y_t, x):
        obs_var = params[2]
        return -HALF_LOG_2PI - 0.5 * np.log(obs_var) - 0.5 * (y_t - x) ** 2 / obs_var


class StochasticVolatilityModel(StateSpaceModel):
    """``y_t = exp(x_t/2) w_t``, ``x_t = mu + phi (x_{t-1} - mu) + sigma v_t``.

    The parameter vector is ``(mu, tau, sigma2)`` with ``phi = 2 tau - 1``.
    """

    def params(self, theta):
        mu, tau, sigma2 = np.asarray(theta, dtype=float)
        if not (0.0 < tau < 1.0) or sigma2 <= 0:
            raise DomainError(f"invalid SV parameters {theta}")
        return mu, 2.0 * tau - 1.0, sigma2

    def initial(self, params, z):
        mu, phi, sigma2 = params
        return mu + np.sqrt(sigma2 / (1 - phi * phi)) * z

    def transition(self, params, x, z):
        mu, phi, sigma2 = params
        return mu + phi * (x - mu) + np.sqrt(sigma2) * z

    def obs_logpdf(self, params, y_t, x):
        return -HALF_LOG_2PI - 0.5 * x - 0.5 * y_t * y_t * np.exp(-x)


def _draw_noise(T: int, n: int, rng: np.random.Generator):
    z = rng.standard_normal((T, n))
    e = rng.standard_exponential((max(T - 1, 1), n + 1))
    return z, e


def _resample_indices(weights: np.ndarray, spacings: np.ndarray) -> np.ndarray:
    n = weights.shape[0]
    cw = np.cumsum(weights)
    # order statistics of n uniforms, scaled to the unnormalised total
    u = np.cumsum(spacings[:n]) * (cw[-1] / spacings.sum())
    return np.minimum(np.searchsorted(cw, u, side="left"), n - 1)


def bootstrap_particle_filter_reference(y, model: StateSpaceModel, params, z, e) -> tuple[float, bool]:
    """Pure numpy filter driven by explicit noise (``z``: T x N normals,
    ``e``: (T-1) x (N+1) exponentials)."""
    T, n = z.shape
    x = model.initial(params, z[0])
    loglik = 0.0
    for t in range(T):
        lw = model.obs_logpdf(params, y[t], x)
        m = np.max(lw)
        if not np.isfinite(m):
            return LOG_FLOOR, True
        w = np.exp(lw - m)
        s = 0.0
        for v in w:  # sequential sum, matching the compiled kernel
            s += v
        loglik += m + np.log(s / n)
        if t == T - 1:
            break
        idx = _resample_indices(w, e[t])
        x = model.transition(params, x[idx], z[t + 1])
    return float(loglik), False


@numba.njit(nogil=True, cache=True)
def _sv_filter_kernel(y, mu, phi, sigma2, z, e):
    T, n = z.shape
    x = np.empty(n)
    xn = np.empty(n)
    w = np.empty(n)
    sd0 = np.sqrt(sigma2 / (1.0 - phi * phi))
    sd = np.sqrt(sigma2)
    for k in range(n):
        x[k] = mu + sd0 * z[0, k]
    loglik = 0.0
    c = -0.5 * np.log(2.0 * np.pi)
    for t in range(T):
        half_y2 = 0.5 * y[t] * y[t]
        m = -np.inf
        for k in range(n):
            w[k] = c - 0.5 * x[k] - half_y2 * np.exp(-x[k])
            if w[k] > m:
                m = w[k]
        if not np.isfinite(m):
            return -1e6, True
        s = 0.0
        for k in range(n):
            w[k] = np.exp(w[k] - m)
            s += w[k]
        loglik += m + np.log(s / n)
        if t == T - 1:
            break
        tot = 0.0
        for k in range(n + 1):
            tot += e[t, k]
        scale = s / tot
        j = 0
        cw = w[0]
        acc = 0.0
        for k in range(n):
            acc += e[t, k] * scale
            while acc > cw and j < n - 1:
                j += 1
                cw += w[j]
            xn[k] = mu + phi * (x[j] - mu) + sd * z[t + 1, k]
        for k in range(n):
            x[k] = xn[k]
    return loglik, False


def sv_filter(y, params, z, e) -> tuple[float, bool]:
    mu, phi, sigma2 = params
    value, floored = _sv_filter_kernel(np.ascontiguousarray(y), mu, phi, sigma2, z, e)
    return float(value), bool(floored)


def bootstrap_particle_filter(
    data: SsmData, model: StateSpaceModel, theta, n_particles: int, rng: np.random.Generator
) -> LogLikEstimate:
    """Unbiased estimate of ``p(y | theta)`` from a bootstrap filter."""
    if n_particles < 2:
        raise ContractError("a particle filter needs at least two particles")
    params = model.params(theta)
    z, e = _draw_noise(data.T, n_particles, rng)
    if isinstance(model, StochasticVolatilityModel):
        value, floored = sv_filter(data.y, params, z, e)
    else:
        value, floored = bootstrap_particle_filter_reference(data.y, model, params, z, e)
    return LogLikEstimate(value, n_particles, None, floored)


class ParticleFilterEstimator(LikelihoodEstimator):
    def __init__(self, data: SsmData, model: StateSpaceModel, n_particles: int):
        self.data = data
        self.model = model
        self.n_particles = int(n_particles)
        self.spec = EstimatorSpec(EstimatorKind.BOOTSTRAP_PARTICLE_FILTER, FixedN(self.n_particles))

    def with_particles(self, n_particles: int) -> "ParticleFilterEstimator":
        return ParticleFilterEstimator(self.data, self.model, n_particles)

    def estimate(self, theta, rng):
        return bootstrap_particle_filter(self.data, self.model, theta, self.n_particles, rng)
