"""Exponential-family variational factors and their products.

Every factor stores its natural-parameter vector ``lam`` and knows how to
evaluate its log density, score (gradient of the log density with respect to
``lam``), Fisher information, and how to turn a block of uniforms into a draw
by inverse-CDF transforms.

Conventions
-----------
Beta(alpha, beta)
    ``lam = (alpha, beta)``; sufficient statistics ``(log x, log(1 - x))``.
InverseGamma(a, b)
    density ``b**a / Gamma(a) * x**(-a-1) * exp(-b/x)``; ``lam = (a, b)``;
    sufficient statistics ``(-log x, -1/x)``.
MultivariateNormal(mu, Sigma)
    ``lam = [Sigma^-1 mu ; -1/2 D' vec(Sigma^-1)]``; sufficient statistics
    ``[x ; vech(x x')]`` where ``D`` is the duplication matrix.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy import special

from .errors import ConditioningError, ContractError, DomainError, InvalidStateError

LOG_2PI = np.log(2.0 * np.pi)
MAX_CONDITION = 1e12
EIG_FLOOR = 1e-8


# ---------------------------------------------------------------------------
# vec / vech helpers
# ---------------------------------------------------------------------------


def vec(a: np.ndarray) -> np.ndarray:
    """Stack the columns of ``a``."""
    return np.asarray(a).reshape(-1, order="F")


def vech(a: np.ndarray) -> np.ndarray:
    """Stack the columns of the lower-triangular part of a square matrix."""
    a = np.asarray(a)
    d = a.shape[-1]
    rows, cols = _vech_indices(d)
    return a[..., rows, cols]


def unvech(v: np.ndarray, d: int) -> np.ndarray:
    """Inverse of :func:`vech` for symmetric matrices."""
    v = np.asarray(v, dtype=float)
    rows, cols = _vech_indices(d)
    out = np.zeros(v.shape[:-1] + (d, d))
    out[..., rows, cols] = v
    out[..., cols, rows] = v
    return out


def _vech_indices(d: int):
    # column-major traversal of the lower triangle
    rows, cols = [], []
    for j in range(d):
        for i in range(j, d):
            rows.append(i)
            cols.append(j)
    return np.array(rows, dtype=int), np.array(cols, dtype=int)


def duplication_matrix(d: int) -> np.ndarray:
    """Return the ``d**2 x d(d+1)/2`` matrix with ``D @ vech(A) == vec(A)``."""
    if d < 1:
        raise ContractError("duplication matrix needs d >= 1")
    out = np.zeros((d * d, d * (d + 1) // 2))
    rows, cols = _vech_indices(d)
    for k, (i, j) in enumerate(zip(rows, cols)):
        out[i + j * d, k] = 1.0
        out[j + i * d, k] = 1.0
    return out


def duplication_pinv(d: int) -> np.ndarray:
    """Moore-Penrose inverse ``(D'D)^-1 D'`` of the duplication matrix."""
    dm = duplication_matrix(d)
    return np.linalg.solve(dm.T @ dm, dm.T)


# ---------------------------------------------------------------------------
# multivariate normal parameter maps
# ---------------------------------------------------------------------------


def mean_to_natural_mvn(mu, sigma) -> np.ndarray:
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    d = mu.shape[0]
    if sigma.shape != (d, d):
        raise ContractError(f"Sigma must be {d}x{d}, got {sigma.shape}")
    prec = _spd_inverse(sigma)
    lam1 = prec @ mu
    lam2 = -0.5 * duplication_matrix(d).T @ vec(prec)
    return np.concatenate([lam1, lam2])


def natural_to_mean_mvn(lam) -> tuple[np.ndarray, np.ndarray]:
    lam = np.asarray(lam, dtype=float)
    d = mvn_dim_from_params(lam.shape[0])
    lam1, lam2 = lam[:d], lam[d:]
    half_neg_prec = (duplication_pinv(d).T @ lam2).reshape(d, d, order="F")
    prec = -2.0 * half_neg_prec
    prec = 0.5 * (prec + prec.T)
    sigma = _spd_inverse(prec, lam)
    mu = sigma @ lam1
    return mu, sigma


def mvn_dim_from_params(p: int) -> int:
    d = int(round((-3 + np.sqrt(9 + 8 * p)) / 2))
    if d < 1 or d + d * (d + 1) // 2 != p:
        raise ContractError(f"{p} is not a valid MVN natural-parameter length")
    return d


def _spd_inverse(a: np.ndarray, lam=None) -> np.ndarray:
    a = 0.5 * (a + a.T)
    if not np.all(np.isfinite(a)):
        raise ConditioningError("matrix has non-finite entries", lam)
    try:
        chol = np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        raise ConditioningError("matrix is not positive definite", lam) from None
    eig = np.linalg.eigvalsh(a)
    if eig[-1] / eig[0] > MAX_CONDITION:
        raise ConditioningError(f"condition number {eig[-1] / eig[0]:.3g} too large", lam)
    inv_chol = np.linalg.inv(chol)
    return inv_chol.T @ inv_chol


def fisher_info_inverse_mvn(mu, sigma) -> np.ndarray:
    """Closed-form inverse Fisher information of N(mu, Sigma) in natural
    coordinates (Wand's formula)."""
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    d = mu.shape[0]
    prec = _spd_inverse(sigma)
    dp = duplication_pinv(d)
    m = 2.0 * dp @ np.kron(mu[:, None], np.eye(d))
    s = 2.0 * dp @ np.kron(sigma, sigma) @ dp.T
    s_inv = np.linalg.inv(s)
    top_left = prec + m.T @ s_inv @ m
    top_right = -m.T @ s_inv
    return np.block([[top_left, top_right], [top_right.T, s_inv]])


# ---------------------------------------------------------------------------
# factors
# ---------------------------------------------------------------------------


def _batch(x, dim: int):
    arr = np.asarray(x, dtype=float)
    scalar = arr.ndim == 0 or (arr.ndim == 1 and dim > 1)
    if dim == 1:
        arr = arr.reshape(-1, 1)
    else:
        arr = np.atleast_2d(arr)
    if arr.shape[-1] != dim:
        raise ContractError(f"expected points of dimension {dim}, got shape {arr.shape}")
    return arr, scalar


def _unbatch(values: np.ndarray, scalar: bool):
    return values[0] if scalar else values


class VariationalFactor(ABC):
    """One exponential-family factor ``q_lam`` over a block of coordinates.

    Factors are immutable: updates go through :meth:`with_lambda`.
    """

    kind: str = ""
    dim: int = 1
    n_uniforms: int = 1

    def __init__(self, lam):
        lam = np.array(lam, dtype=float).reshape(-1)
        if not np.all(np.isfinite(lam)):
            raise InvalidStateError(f"non-finite natural parameters {lam}")
        self._check(lam)
        lam.flags.writeable = False
        self._lam = lam

    @property
    def lam(self) -> np.ndarray:
        return self._lam

    @property
    def n_params(self) -> int:
        return self._lam.shape[0]

    def with_lambda(self, lam) -> "VariationalFactor":
        return type(self)(lam, **self._extra_kwargs())

    def _extra_kwargs(self) -> dict:
        return {}

    def is_valid(self, lam) -> bool:
        lam = np.asarray(lam, dtype=float)
        if not np.all(np.isfinite(lam)):
            return False
        try:
            self._check(lam)
        except (InvalidStateError, ConditioningError):
            return False
        return True

    @abstractmethod
    def _check(self, lam: np.ndarray) -> None:
        """Raise InvalidStateError if ``lam`` is outside the parameter space."""

    @abstractmethod
    def project(self, lam) -> np.ndarray:
        """Return the nearest usable parameter vector."""

    @abstractmethod
    def log_density(self, x):
        ...

    @abstractmethod
    def sufficient_stats(self, x) -> np.ndarray:
        ...

    @abstractmethod
    def score(self, x) -> np.ndarray:
        ...

    @abstractmethod
    def fisher_info(self) -> np.ndarray:
        ...

    def fisher_inverse(self) -> np.ndarray:
        info = self.fisher_info()
        cond = np.linalg.cond(info)
        if not np.isfinite(cond) or cond > MAX_CONDITION:
            raise ConditioningError(
                f"{self.kind} Fisher information condition number {cond:.3g}", self.lam
            )
        return np.linalg.inv(info)

    @abstractmethod
    def sample(self, uniforms) -> np.ndarray:
        """Map an ``(S, n_uniforms)`` array of uniforms to ``(S, dim)`` draws."""

    @abstractmethod
    def moments(self) -> tuple[np.ndarray, np.ndarray]:
        """Mean and standard deviation of each coordinate."""

    def tempered(self, scale: float) -> "VariationalFactor":
        """Return ``q**(1/scale**2)`` normalised: same family, wider tails."""
        raise NotImplementedError

    def _uniforms(self, uniforms) -> np.ndarray:
        u = np.asarray(uniforms, dtype=float)
        if u.ndim == 1:
            u = u.reshape(1, -1) if u.shape[0] == self.n_uniforms else u.reshape(-1, 1)
        if u.ndim != 2 or u.shape[1] != self.n_uniforms:
            raise ContractError(
                f"{self.kind} consumes {self.n_uniforms} uniforms per draw, got shape {u.shape}"
            )
        if np.any((u <= 0.0) | (u >= 1.0)):
            raise DomainError("uniforms must lie strictly inside (0, 1)")
        return u

    def __repr__(self):
        return f"{type(self).__name__}(lam={np.array2string(self.lam, precision=5)})"


class BetaFactor(VariationalFactor):
    """Beta(alpha, beta) with natural parameters stored as ``(alpha, beta)``.

    ``min_shape`` enforces ``alpha, beta > min_shape`` (1.0 forces a mode).
    """

    kind = "Beta"
    dim = 1
    n_uniforms = 1

    def __init__(self, lam, min_shape: float = 0.0):
        self.min_shape = float(min_shape)
        super().__init__(lam)

    @classmethod
    def from_shapes(cls, alpha, beta, min_shape=0.0):
        return cls([alpha, beta], min_shape=min_shape)

    def _extra_kwargs(self):
        return {"min_shape": self.min_shape}

    def _check(self, lam):
        if lam.shape != (2,):
            raise InvalidStateError("Beta factor needs two parameters")
        if np.any(lam <= self.min_shape):
            raise InvalidStateError(f"Beta shapes {lam} must exceed {self.min_shape}")

    def project(self, lam):
        return np.maximum(np.asarray(lam, dtype=float), self.min_shape + 1e-6)

    @property
    def alpha(self):
        return self._lam[0]

    @property
    def beta(self):
        return self._lam[1]

    def _x(self, x):
        xb, scalar = _batch(x, 1)
        if np.any((xb <= 0.0) | (xb >= 1.0)):
            raise DomainError("Beta density is supported on (0, 1)")
        return xb[:, 0], scalar

    def log_density(self, x):
        t, scalar = self._x(x)
        a, b = self.alpha, self.beta
        val = (a - 1.0) * np.log(t) + (b - 1.0) * np.log1p(-t) - special.betaln(a, b)
        return _unbatch(val, scalar)

    def sufficient_stats(self, x):
        t, _ = self._x(x)
        return np.column_stack([np.log(t), np.log1p(-t)])

    def score(self, x):
        a, b = self.alpha, self.beta
        dab = special.digamma(a + b)
        stats = self.sufficient_stats(x)
        return stats - np.array([special.digamma(a) - dab, special.digamma(b) - dab])

    def fisher_info(self):
        a, b = self.alpha, self.beta
        tab = special.polygamma(1, a + b)
        # cov(log x, log(1 - x)) = -trigamma(a + b)
        return np.array(
            [[special.polygamma(1, a) - tab, -tab], [-tab, special.polygamma(1, b) - tab]]
        )

    def sample(self, uniforms):
        u = self._uniforms(uniforms)
        x = special.betaincinv(self.alpha, self.beta, u[:, 0])
        eps = np.finfo(float).tiny
        return np.clip(x, eps, 1.0 - np.finfo(float).epsneg)[:, None]

    def moments(self):
        a, b = self.alpha, self.beta
        mean = a / (a + b)
        var = a * b / ((a + b) ** 2 * (a + b + 1.0))
        return np.array([mean]), np.array([np.sqrt(var)])

    def tempered(self, scale):
        w = 1.0 / scale**2
        return BetaFactor([(self.alpha - 1.0) * w + 1.0, (self.beta - 1.0) * w + 1.0])


class InverseGammaFactor(VariationalFactor):
    """Inverse gamma IG(a, b) with mean ``b / (a - 1)``."""

    kind = "InverseGamma"
    dim = 1
    n_uniforms = 1

    @classmethod
    def from_shapes(cls, a, b):
        return cls([a, b])

    def _check(self, lam):
        if lam.shape != (2,):
            raise InvalidStateError("inverse-gamma factor needs two parameters")
        if np.any(lam <= 0.0):
            raise InvalidStateError(f"inverse-gamma parameters {lam} must be positive")

    def project(self, lam):
        return np.maximum(np.asarray(lam, dtype=float), 1e-6)

    @property
    def a(self):
        return self._lam[0]

    @property
    def b(self):
        return self._lam[1]

    def _x(self, x):
        xb, scalar = _batch(x, 1)
        if np.any(xb <= 0.0):
            raise DomainError("inverse-gamma density is supported on (0, inf)")
        return xb[:, 0], scalar

    def log_density(self, x):
        t, scalar = self._x(x)
        a, b = self.a, self.b
        val = a * np.log(b) - special.gammaln(a) - (a + 1.0) * np.log(t) - b / t
        return _unbatch(val, scalar)

    def sufficient_stats(self, x):
        t, _ = self._x(x)
        return np.column_stack([-np.log(t), -1.0 / t])

    def score(self, x):
        t, _ = self._x(x)
        a, b = self.a, self.b
        return np.column_stack([np.log(b) - special.digamma(a) - np.log(t), a / b - 1.0 / t])

    def fisher_info(self):
        a, b = self.a, self.b
        return np.array([[special.polygamma(1, a), -1.0 / b], [-1.0 / b, a / b**2]])

    def sample(self, uniforms):
        u = self._uniforms(uniforms)
        g = special.gammainccinv(self.a, u[:, 0])
        return (self.b / np.maximum(g, np.finfo(float).tiny))[:, None]

    def moments(self):
        a, b = self.a, self.b
        mean = b / (a - 1.0) if a > 1 else np.inf
        var = b**2 / ((a - 1.0) ** 2 * (a - 2.0)) if a > 2 else np.inf
        return np.array([mean]), np.array([np.sqrt(var)])

    def tempered(self, scale):
        w = 1.0 / scale**2
        return InverseGammaFactor([(self.a + 1.0) * w - 1.0, self.b * w])


class MvnFactor(VariationalFactor):
    """d-variate normal in natural coordinates."""

    kind = "MultivariateNormal"

    def __init__(self, lam):
        lam = np.asarray(lam, dtype=float).reshape(-1)
        self.dim = mvn_dim_from_params(lam.shape[0])
        self.n_uniforms = self.dim
        super().__init__(lam)

    @classmethod
    def from_moments(cls, mu, sigma):
        return cls(mean_to_natural_mvn(mu, sigma))

    def _check(self, lam):
        try:
            natural_to_mean_mvn(lam)
        except ConditioningError as exc:
            raise InvalidStateError(f"MVN natural parameters give no valid covariance: {exc}")

    def project(self, lam):
        lam = np.asarray(lam, dtype=float)
        d = self.dim
        prec = -2.0 * (duplication_pinv(d).T @ lam[d:]).reshape(d, d, order="F")
        prec = 0.5 * (prec + prec.T)
        evals, evecs = np.linalg.eigh(prec)
        if evals[-1] <= 0:
            # no usable direction at all: keep the current covariance
            return self.lam.copy()
        # flooring precision eigenvalues at 1e-8 of the largest is the same as
        # capping the covariance spectrum at 1e8 times its smallest value
        evals = np.maximum(evals, EIG_FLOOR * evals[-1])
        prec = (evecs * evals) @ evecs.T
        sigma = (evecs / evals) @ evecs.T
        try:
            mu = sigma @ lam[:d]
            return mean_to_natural_mvn(mu, 0.5 * (sigma + sigma.T))
        except ConditioningError:
            return self.lam.copy()

    @cached_property
    def _moments(self):
        return natural_to_mean_mvn(self._lam)

    @property
    def mu(self) -> np.ndarray:
        return self._moments[0]

    @property
    def sigma(self) -> np.ndarray:
        return self._moments[1]

    @cached_property
    def chol(self) -> np.ndarray:
        return np.linalg.cholesky(self.sigma)

    @cached_property
    def _log_det(self) -> float:
        return 2.0 * np.sum(np.log(np.diag(self.chol)))

    def log_density(self, x):
        xb, scalar = _batch(x, self.dim)
        z = np.linalg.solve(self.chol, (xb - self.mu).T)
        val = -0.5 * (self.dim * LOG_2PI + self._log_det + np.sum(z * z, axis=0))
        return _unbatch(val, scalar)

    def sufficient_stats(self, x):
        xb, _ = _batch(x, self.dim)
        outer = xb[:, :, None] * xb[:, None, :]
        return np.hstack([xb, vech(outer)])

    def score(self, x):
        xb, _ = _batch(x, self.dim)
        mu, sigma = self.mu, self.sigma
        outer = xb[:, :, None] * xb[:, None, :]
        second = vech(outer - (sigma + np.outer(mu, mu)))
        return np.hstack([xb - mu, second])

    def fisher_info(self):
        d, mu, sigma = self.dim, self.mu, self.sigma
        dp = duplication_pinv(d)
        eye = np.eye(d)
        a = np.kron(mu[:, None], eye) + np.kron(eye, mu[:, None])
        commutation = _commutation(d)
        var_vec = a @ sigma @ a.T + (np.eye(d * d) + commutation) @ np.kron(sigma, sigma)
        cross = sigma @ a.T @ dp.T
        return np.block([[sigma, cross], [cross.T, dp @ var_vec @ dp.T]])

    def fisher_inverse(self):
        return fisher_info_inverse_mvn(self.mu, self.sigma)

    def sample(self, uniforms):
        u = self._uniforms(uniforms)
        z = special.ndtri(u)
        return self.mu + z @ self.chol.T

    def moments(self):
        return self.mu.copy(), np.sqrt(np.diag(self.sigma))

    def tempered(self, scale):
        return MvnFactor.from_moments(self.mu, self.sigma * scale**2)


def _commutation(d: int) -> np.ndarray:
    k = np.zeros((d * d, d * d))
    for i in range(d):
        for j in range(d):
            k[i * d + j, j * d + i] = 1.0
    return k


# ---------------------------------------------------------------------------
# product family
# ---------------------------------------------------------------------------


class ProductFamily:
    """Ordered product of factors, each owning a block of theta coordinates.

    Blocks default to consecutive coordinates in factor order.
    """

    def __init__(self, factors: Sequence[VariationalFactor], blocks=None):
        self.factors = tuple(factors)
        if not self.factors:
            raise ContractError("a product family needs at least one factor")
        if blocks is None:
            blocks, start = [], 0
            for f in self.factors:
                blocks.append(np.arange(start, start + f.dim))
                start += f.dim
        blocks = [np.asarray(b, dtype=int).reshape(-1) for b in blocks]
        if len(blocks) != len(self.factors):
            raise ContractError("one block per factor is required")
        for f, b in zip(self.factors, blocks):
            if b.shape[0] != f.dim:
                raise ContractError(f"block {b} does not match factor dimension {f.dim}")
        covered = np.sort(np.concatenate(blocks))
        if not np.array_equal(covered, np.arange(covered.shape[0])):
            raise ContractError("factor blocks must partition the theta coordinates")
        self.blocks = tuple(blocks)
        self.dim_theta = covered.shape[0]
        sizes = [f.n_params for f in self.factors]
        edges = np.concatenate([[0], np.cumsum(sizes)])
        self.param_slices = tuple(slice(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]))
        usizes = [f.n_uniforms for f in self.factors]
        uedges = np.concatenate([[0], np.cumsum(usizes)])
        self.uniform_slices = tuple(slice(int(a), int(b)) for a, b in zip(uedges[:-1], uedges[1:]))

    @property
    def n_factors(self) -> int:
        return len(self.factors)

    @property
    def n_params(self) -> int:
        return self.param_slices[-1].stop

    @property
    def n_uniforms(self) -> int:
        return self.uniform_slices[-1].stop

    @property
    def lam(self) -> np.ndarray:
        return np.concatenate([f.lam for f in self.factors])

    def split(self, vector) -> list[np.ndarray]:
        vector = np.asarray(vector)
        return [vector[..., s] for s in self.param_slices]

    def with_lambda(self, lam) -> "ProductFamily":
        parts = self.split(np.asarray(lam, dtype=float))
        return ProductFamily([f.with_lambda(p) for f, p in zip(self.factors, parts)], self.blocks)

    def is_valid(self, lam) -> bool:
        return all(f.is_valid(p) for f, p in zip(self.factors, self.split(lam)))

    def project(self, lam) -> np.ndarray:
        return np.concatenate([f.project(p) for f, p in zip(self.factors, self.split(lam))])

    def sample(self, uniforms) -> np.ndarray:
        u = np.atleast_2d(np.asarray(uniforms, dtype=float))
        if u.shape[1] != self.n_uniforms:
            raise ContractError(
                f"family consumes {self.n_uniforms} uniforms per draw, got {u.shape[1]}"
            )
        theta = np.empty((u.shape[0], self.dim_theta))
        for f, b, us in zip(self.factors, self.blocks, self.uniform_slices):
            theta[:, b] = f.sample(u[:, us])
        return theta

    def log_density_blocks(self, theta) -> np.ndarray:
        theta = np.atleast_2d(theta)
        return np.column_stack(
            [np.atleast_1d(f.log_density(theta[:, b])) for f, b in zip(self.factors, self.blocks)]
        )

    def log_density(self, theta) -> np.ndarray:
        return self.log_density_blocks(theta).sum(axis=1)

    def score(self, theta) -> np.ndarray:
        theta = np.atleast_2d(theta)
        return np.hstack([f.score(theta[:, b]) for f, b in zip(self.factors, self.blocks)])

    def sufficient_stats(self, theta) -> np.ndarray:
        theta = np.atleast_2d(theta)
        return np.hstack(
            [f.sufficient_stats(theta[:, b]) for f, b in zip(self.factors, self.blocks)]
        )

    def param_factor_index(self) -> np.ndarray:
        """Factor index owning each natural-parameter coordinate."""
        out = np.empty(self.n_params, dtype=int)
        for k, s in enumerate(self.param_slices):
            out[s] = k
        return out

    def moments(self) -> tuple[np.ndarray, np.ndarray]:
        mean = np.empty(self.dim_theta)
        sd = np.empty(self.dim_theta)
        for f, b in zip(self.factors, self.blocks):
            m, s = f.moments()
            mean[b] = m
            sd[b] = s
        return mean, sd

    def tempered(self, scale: float) -> "ProductFamily":
        return ProductFamily([f.tempered(scale) for f in self.factors], self.blocks)

    def describe(self) -> list[dict]:
        return [
            {"kind": f.kind, "block": b.tolist(), "lambda": f.lam.tolist()}
            for f, b in zip(self.factors, self.blocks)
        ]

    @classmethod
    def from_description(cls, desc: Sequence[dict]) -> "ProductFamily":
        """Inverse of :meth:`describe`."""
        kinds = {c.kind: c for c in (BetaFactor, InverseGammaFactor, MvnFactor)}
        try:
            factors = [kinds[d["kind"]](d["lambda"]) for d in desc]
            blocks = [d["block"] for d in desc]
        except (KeyError, TypeError) as exc:
            raise ContractError(f"malformed family description: {exc}") from exc
        return cls(factors, blocks)

    def __repr__(self):
        return f"ProductFamily({', '.join(repr(f) for f in self.factors)})"
