import numpy as np
import pytest
from scipy import integrate, stats

from vbil.expfam import BetaFactor, InverseGammaFactor, MvnFactor, ProductFamily
from vbil.models import tau_to_phi
from vbil.report import coordinate_marginals, density_grid, reported_moments

from .conftest import mc_close


def _sv_like():
    return ProductFamily(
        [
            MvnFactor.from_moments([-0.8], [[0.01]]),
            BetaFactor([95.0, 5.0]),
            InverseGammaFactor([11.0, 0.3]),
        ]
    )


def test_coordinate_marginals_follow_blocks():
    fam = ProductFamily(
        [InverseGammaFactor([3.0, 2.0]), MvnFactor.from_moments([1.0, -1.0], [[4.0, 0.5], [0.5, 9.0]])],
        blocks=[[2], [0, 1]],
    )
    m = coordinate_marginals(fam)
    assert m[0].mean() == pytest.approx(1.0) and m[0].std() == pytest.approx(2.0)
    assert m[1].mean() == pytest.approx(-1.0) and m[1].std() == pytest.approx(3.0)
    assert m[2].mean() == pytest.approx(1.0)


def test_moments_without_report_are_exact():
    fam = _sv_like()
    mean, sd = reported_moments(fam)
    np.testing.assert_allclose(mean, [-0.8, 0.95, 0.03])
    np.testing.assert_allclose(sd[0], 0.1)


def test_reported_moments_for_affine_report():
    # phi = 2 tau - 1, so its mean and sd follow exactly from the Beta marginal
    fam = _sv_like()
    n = 200_000
    mean, sd = reported_moments(fam, tau_to_phi, n_draws=n, seed=1)
    beta = stats.beta(95, 5)
    assert mc_close(mean[1], 2 * beta.mean() - 1, 2 * beta.std() / np.sqrt(n))
    assert sd[1] == pytest.approx(2 * beta.std(), rel=0.01)
    again, _ = reported_moments(fam, tau_to_phi, n_draws=n, seed=1)
    np.testing.assert_array_equal(mean, again)


def test_density_grid_integrates_to_one_and_matches_marginals():
    fam = _sv_like()
    for (x, d), m in zip(density_grid(fam), coordinate_marginals(fam)):
        assert integrate.trapezoid(d, x) == pytest.approx(1.0, abs=1e-3)
        np.testing.assert_allclose(d, m.pdf(x))


def test_density_grid_under_report_is_change_of_variables():
    fam = _sv_like()
    x, d = density_grid(fam, tau_to_phi)[1]
    assert np.all(np.diff(x) > 0)
    # oracle: density of 2 T - 1 with T ~ Beta(95, 5)
    np.testing.assert_allclose(d, 0.5 * stats.beta(95, 5).pdf((x + 1) / 2), rtol=1e-6)
    assert integrate.trapezoid(d, x) == pytest.approx(1.0, abs=1e-3)
