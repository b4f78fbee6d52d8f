import numpy as np
import pytest

from vbil import rqmc
from vbil.errors import CapabilityError, ContractError

from .conftest import mc_close


def test_shapes_and_open_unit_cube():
    for gen in rqmc.Generator:
        ps = rqmc.generate(100, 5, gen, seed=1)
        assert ps.points.shape == (100, 5)
        assert np.all((ps.points > 0) & (ps.points < 1))


def test_unshifted_set_is_a_net():
    # every elementary interval of length 1/n in each coordinate holds one point
    n = 256
    ints = rqmc.sobol_integers(n, 4)
    cells = (ints >> np.uint64(rqmc.BITS - 8)).astype(int)
    for j in range(4):
        assert np.array_equal(np.sort(cells[:, j]), np.arange(n))


def test_digital_shift_keeps_the_net_and_is_invertible():
    ps = rqmc.generate(128, 3, seed=42)
    ints = rqmc.unshift(ps)
    np.testing.assert_array_equal(ints, rqmc.sobol_integers(128, 3))
    cells = np.floor(ps.points * 128).astype(int)
    for j in range(3):
        assert np.array_equal(np.sort(cells[:, j]), np.arange(128))


def test_same_seed_same_points():
    a = rqmc.generate(64, 2, seed=5).points
    b = rqmc.generate(64, 2, seed=5).points
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, rqmc.generate(64, 2, seed=6).points)


def test_shifted_points_are_marginally_uniform():
    # oracle: a single shifted point is U(0,1)^d, so E[u] = 1/2 and E[u^2] = 1/3
    rng = np.random.default_rng(0)
    first = np.array([rqmc.generate(16, 3, seed=rng).points[5] for _ in range(4000)])
    assert mc_close(first.mean(axis=0), 0.5, np.sqrt(1 / 12 / 4000))
    assert mc_close((first**2).mean(axis=0), 1 / 3, np.sqrt(4 / 45 / 4000))


def test_rqmc_mean_is_unbiased():
    f = lambda u: np.exp(u.sum(axis=1))  # noqa: E731
    truth = (np.e - 1.0) ** 2
    rng = np.random.default_rng(11)
    means = np.array([f(rqmc.generate(64, 2, seed=rng).points).mean() for _ in range(2000)])
    assert mc_close(means.mean(), truth, means.std(ddof=1) / np.sqrt(2000))


def test_variance_reduction_on_smooth_integrand():
    f = lambda u: np.exp(u.sum(axis=1))  # noqa: E731
    assert rqmc.variance_ratio(f, 256, 2, 200, seed=3) < 0.05


def test_constant_estimand_ratio_is_one():
    assert rqmc.variance_ratio(lambda u: np.ones(u.shape[0]), 16, 2, 20, seed=0) == 1.0


def test_dimension_limits():
    with pytest.raises(CapabilityError):
        rqmc.generate(4, rqmc.MAX_DIMENSION + 1)
    with pytest.raises(ContractError):
        rqmc.generate(0, 2)
    with pytest.raises(ContractError):
        rqmc.unshift(rqmc.generate(4, 2, rqmc.Generator.PLAIN_MONTE_CARLO, seed=1))
