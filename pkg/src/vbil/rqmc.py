"""Randomised quasi-Monte Carlo point sets.

Sobol points are produced as 52-bit integers (Joe-Kuo direction numbers via
:class:`scipy.stats.qmc.Sobol`) and randomised by a digital shift: every
coordinate is XOR-ed with one random 52-bit integer. Each shifted point is
marginally uniform, so averages over the set are unbiased, while the net
structure of the unshifted set is kept.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np
from scipy.stats import qmc

from .errors import CapabilityError, ContractError

BITS = 52
MAX_DIMENSION = qmc.Sobol.MAXDIM
EPS = 2.0**-53


class Generator(str, Enum):
    SOBOL_DIGITAL_SHIFT = "sobol"
    PLAIN_MONTE_CARLO = "mc"


@dataclass(frozen=True)
class RqmcPointSet:
    points: np.ndarray
    generator: Generator
    seed: int | None
    shift: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]


def sobol_integers(n: int, d: int) -> np.ndarray:
    """First ``n`` unscrambled Sobol points as integers in ``[0, 2**52)``.

    The set is generated at the next power of two and truncated.
    """
    _check_dims(n, d)
    m = max(0, int(np.ceil(np.log2(n))))
    engine = qmc.Sobol(d, scramble=False, bits=BITS)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        pts = engine.random_base2(m)[:n]
    # floats are exact multiples of 2**-52
    return np.ldexp(pts, BITS).astype(np.uint64)


def _check_dims(n, d):
    if n < 1:
        raise ContractError("need at least one point")
    if d < 1:
        raise ContractError("dimension must be positive")
    if d > MAX_DIMENSION:
        raise CapabilityError(f"Sobol direction numbers cover d <= {MAX_DIMENSION}, got {d}")


def _to_unit(ints: np.ndarray) -> np.ndarray:
    u = np.ldexp(ints.astype(np.float64), -BITS)
    return np.clip(u, EPS, 1.0 - EPS)


def digital_shift(ints: np.ndarray, shift: np.ndarray) -> np.ndarray:
    return np.bitwise_xor(ints, shift.astype(np.uint64)[None, :])


def generate(n: int, d: int, generator=Generator.SOBOL_DIGITAL_SHIFT, seed=None) -> RqmcPointSet:
    """Draw an ``n x d`` point set in (0, 1)^d.

    ``seed`` may be an integer, a :class:`numpy.random.SeedSequence` or a
    :class:`numpy.random.Generator`.
    """
    generator = Generator(generator)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    record_seed = seed if isinstance(seed, (int, np.integer)) else None
    if generator is Generator.PLAIN_MONTE_CARLO:
        if n < 1 or d < 1:
            raise ContractError("need n >= 1 and d >= 1")
        pts = np.clip(rng.random((n, d)), EPS, 1.0 - EPS)
        return RqmcPointSet(pts, generator, record_seed)
    ints = sobol_integers(n, d)
    shift = rng.integers(0, 2**BITS, size=d, dtype=np.uint64)
    pts = _to_unit(digital_shift(ints, shift))
    return RqmcPointSet(pts, generator, record_seed, shift)


def unshift(point_set: RqmcPointSet) -> np.ndarray:
    """Recover the integer Sobol set from a shifted point set."""
    if point_set.shift is None:
        raise ContractError("point set carries no digital shift")
    ints = np.ldexp(point_set.points, BITS).astype(np.uint64)
    return digital_shift(ints, point_set.shift)


def variance_ratio(
    estimand: Callable[[np.ndarray], np.ndarray],
    n: int,
    d: int,
    replications: int,
    seed=None,
) -> float:
    """Variance of the RQMC mean of ``estimand`` divided by the plain-MC variance.

    ``estimand`` maps an ``(n, d)`` array to ``n`` values. A zero-over-zero
    ratio (constant estimand) is reported as 1.
    """
    root = np.random.SeedSequence(seed)
    qmc_seed, mc_seed = root.spawn(2)
    qrng = np.random.default_rng(qmc_seed)
    mrng = np.random.default_rng(mc_seed)
    q_means = np.empty(replications)
    m_means = np.empty(replications)
    for r in range(replications):
        q_means[r] = np.mean(estimand(generate(n, d, Generator.SOBOL_DIGITAL_SHIFT, qrng).points))
        m_means[r] = np.mean(estimand(generate(n, d, Generator.PLAIN_MONTE_CARLO, mrng).points))
    vq = np.var(q_means, ddof=1)
    vm = np.var(m_means, ddof=1)
    if vm == 0.0:
        return 1.0 if vq == 0.0 else np.inf
    return float(vq / vm)
