import numpy as np
import pytest
from scipy import stats

from vbil.errors import ContractError, DegenerateSampleError, DomainError
from vbil.expfam import MvnFactor
from vbil.likelihood import (
    LOG_FLOOR,
    AbcData,
    AbcEstimator,
    ExactEstimator,
    FixedN,
    GlmmData,
    LinearGaussianSSM,
    ParticleFilterEstimator,
    PanelISEstimator,
    SsmData,
    StochasticVolatilityModel,
    SyntheticNoiseEstimator,
    TargetSigma2,
    abc_estimate,
    abc_summaries,
    alpha_stable_simulate,
    bootstrap_particle_filter,
    log_mean_exp,
    marginal_refine_estimate,
    panel_is_estimate,
    panel_var_estimate,
    stable_to_tilde,
    synthetic_gaussian_noise_estimate,
    tilde_to_stable,
)
from vbil.likelihood import io
from vbil.likelihood.abc import STABLE_REFERENCE_IQR, mcculloch_scale
from vbil.likelihood.base import EstimatorKind, EstimatorSpec
from vbil.likelihood.panel import adapt_particles
from vbil.likelihood.particle import _draw_noise, bootstrap_particle_filter_reference, sv_filter
from vbil.errors import ConfigError
from vbil.models.glmm import glmm_simulate
from vbil.models.sv import sv_simulate

from .conftest import mc_close
from .oracles import kalman_loglik, panel_quadrature, ratio_check


# --- base ---------------------------------------------------------------


def test_log_mean_exp_is_stable():
    assert log_mean_exp(np.array([1000.0, 1000.0])) == pytest.approx(1000.0)
    assert log_mean_exp(np.array([-np.inf, -np.inf])) == -np.inf
    assert log_mean_exp(np.log([1.0, 3.0])) == pytest.approx(np.log(2.0))


def test_exact_estimator_floors_zero_likelihood():
    est = ExactEstimator(lambda t: np.where(t[:, 0] > 0, 0.0, -np.inf))
    batch = est.estimate_batch(np.array([[1.0], [-1.0]]))
    np.testing.assert_array_equal(batch.log_values, [0.0, LOG_FLOOR])
    np.testing.assert_array_equal(batch.floored, [False, True])
    assert est.estimate(np.array([-1.0])).floored


def test_target_sigma2_needs_a_variance_aware_estimator():
    with pytest.raises(ConfigError):
        EstimatorSpec(EstimatorKind.BOOTSTRAP_PARTICLE_FILTER, TargetSigma2(1.0))


def test_batch_results_do_not_depend_on_executor():
    from concurrent.futures import ThreadPoolExecutor

    y = sv_simulate(0.0, 0.9, 0.1, 50, np.random.default_rng(0))
    est = ParticleFilterEstimator(y, StochasticVolatilityModel(), 50)
    thetas = np.array([[0.0, 0.95, 0.1], [0.1, 0.9, 0.2], [-0.3, 0.97, 0.05]])
    serial = est.estimate_batch(thetas, np.random.SeedSequence(3)).log_values
    with ThreadPoolExecutor(3) as ex:
        threaded = est.estimate_batch(thetas, np.random.SeedSequence(3), ex).log_values
    np.testing.assert_array_equal(serial, threaded)


# --- synthetic noise --------------------------------------------------------


def test_synthetic_noise_is_unbiased_on_the_natural_scale():
    est = SyntheticNoiseEstimator(lambda t: np.zeros(np.atleast_2d(t).shape[0]), 2.0)
    vals = est.estimate_batch(np.zeros((100_000, 1)), np.random.SeedSequence(1)).log_values
    assert ratio_check(vals, 0.0)
    assert np.var(vals) == pytest.approx(2.0, rel=0.02)


def test_synthetic_noise_zero_variance_is_exact():
    f = lambda t: np.atleast_2d(t)[:, 0] * 2.0  # noqa: E731
    assert synthetic_gaussian_noise_estimate(f, [1.5], 0.0, np.random.default_rng(0)).log_value == 3.0
    with pytest.raises(DomainError):
        SyntheticNoiseEstimator(f, -1.0)


# --- panel importance sampling ----------------------------------------------


@pytest.fixture(scope="module")
def small_panels():
    return glmm_simulate([-1.0, 2.0], 1.0, 6, 4, np.random.default_rng(2))


def test_panel_estimator_is_unbiased_against_quadrature(small_panels):
    beta, tau2 = np.array([-1.0, 2.0]), 1.0
    exact = panel_quadrature(small_panels, beta, tau2)
    rng = np.random.default_rng(5)
    vals = [panel_is_estimate(small_panels, np.r_[beta, tau2], 20, rng).log_value for _ in range(10_000)]
    assert ratio_check(vals, exact)


def test_panel_variance_estimate_tracks_empirical_variance(small_panels):
    theta = np.array([-1.0, 2.0, 1.0])
    rng = np.random.default_rng(8)
    ests = [panel_is_estimate(small_panels, theta, 50, rng) for _ in range(3000)]
    empirical = np.var([e.log_value for e in ests])
    reported = np.mean([e.var_log_estimate for e in ests])
    assert reported == pytest.approx(empirical, rel=0.15)


def test_panel_var_estimate_of_equal_weights_is_zero():
    total, gamma, degenerate = panel_var_estimate(np.zeros(6), np.array([3, 3]))
    assert total == 0.0 and not degenerate
    np.testing.assert_allclose(gamma, 0.0)


def test_adaptive_counts_hit_the_target_variance():
    data = glmm_simulate([-1.5, 2.5], 1.5, 100, 5, np.random.default_rng(1))
    theta = np.array([-1.5, 2.5, 1.5])
    est = PanelISEstimator(data, TargetSigma2(1.0, 50))
    rng = np.random.default_rng(4)
    vals = [est.estimate(theta, rng).log_value for _ in range(400)]
    assert 0.6 < np.var(vals) < 1.6


def test_fixed_policy_counts(small_panels):
    est = PanelISEstimator(small_panels, FixedN(7))
    assert np.all(est.particle_counts(np.array([0.0, 0.0, 1.0]), None) == 7)
    with pytest.raises(ContractError):
        adapt_particles(small_panels, np.array([0.0, 0.0, 1.0]), 1.0, 5, np.random.default_rng(0))


def test_glmm_data_validation():
    with pytest.raises(DomainError):
        GlmmData(np.array([[2.0]]), np.ones((1, 1, 1)), np.ones((1, 1), dtype=bool))
    with pytest.raises(ContractError):
        GlmmData(np.array([[1.0]]), np.ones((1, 1, 1)), np.zeros((1, 1), dtype=bool))


# --- particle filter -----------------------------------------------------------


def test_particle_filter_is_unbiased_against_kalman():
    phi, sigma2, obs_var = 0.8, 0.5, 1.0
    rng = np.random.default_rng(12)
    x = np.empty(30)
    x[0] = rng.normal(0, np.sqrt(sigma2 / (1 - phi**2)))
    for t in range(1, 30):
        x[t] = phi * x[t - 1] + rng.normal(0, np.sqrt(sigma2))
    y = SsmData(x + rng.normal(0, 1, 30))
    exact = kalman_loglik(y.y, phi, sigma2, obs_var)
    model = LinearGaussianSSM()
    vals = [bootstrap_particle_filter(y, model, [phi, sigma2, obs_var], 50, rng).log_value for _ in range(10_000)]
    assert ratio_check(vals, exact)


def test_compiled_sv_filter_matches_reference_bitwise():
    y = sv_simulate(-0.5, 0.95, 0.05, 200, np.random.default_rng(3)).y
    model = StochasticVolatilityModel()
    params = model.params([-0.5, 0.975, 0.05])
    z, e = _draw_noise(200, 64, np.random.default_rng(9))
    assert sv_filter(y, params, z, e) == bootstrap_particle_filter_reference(y, model, params, z, e)


def test_particle_filter_argument_checks():
    y = SsmData([0.1, -0.2])
    with pytest.raises(ContractError):
        bootstrap_particle_filter(y, StochasticVolatilityModel(), [0.0, 0.9, 0.1], 1, np.random.default_rng(0))
    with pytest.raises(DomainError):
        StochasticVolatilityModel().params([0.0, 1.2, 0.1])
    with pytest.raises(ContractError):
        SsmData([])


# --- ABC ---------------------------------------------------------------------


def test_stable_simulator_alpha_two_is_gaussian():
    x = alpha_stable_simulate(2.0, 0.0, 1.5, 1.0, 200_000, np.random.default_rng(0))
    assert mc_close(x.mean(), 1.0, np.sqrt(4.5 / 2e5))
    assert np.var(x) == pytest.approx(2 * 1.5**2, rel=0.02)


def test_stable_simulator_matches_scipy_distribution():
    x = alpha_stable_simulate(1.5, 0.5, 1.0, 0.0, 3000, np.random.default_rng(1))
    assert stats.kstest(x, stats.levy_stable(1.5, 0.5).cdf).pvalue > 0.01


def test_reference_iqr_matches_scipy():
    q = stats.levy_stable(1.5, 0.0).ppf([0.25, 0.75])
    assert q[1] - q[0] == pytest.approx(STABLE_REFERENCE_IQR, rel=1e-4)


def test_scale_estimate_is_equivariant():
    y = alpha_stable_simulate(1.5, 0.0, 1.0, 0.0, 1000, np.random.default_rng(4))
    assert mcculloch_scale(3.0 * y + 2.0) == pytest.approx(3.0 * mcculloch_scale(y))


def test_summaries_by_hand():
    y = np.arange(1.0, 101.0)
    q05, q25, q50, q75, q95 = np.quantile(y, [0.05, 0.25, 0.5, 0.75, 0.95])
    s = abc_summaries(y, 2.0)
    np.testing.assert_allclose(
        s, [(q95 - q05) / (q75 - q25), (q95 + q05 - 2 * q50) / (q95 - q05), (q75 - q25) / 2.0, y.mean()]
    )
    with pytest.raises(DegenerateSampleError):
        abc_summaries(np.zeros(50), 1.0)
    with pytest.raises(ContractError):
        abc_summaries(np.arange(10.0), 1.0)


def test_kernel_is_a_normalised_gaussian():
    data = AbcData.from_observations(np.linspace(-2, 2, 40) ** 3, 0.02 * np.eye(4))
    s = data.summary + np.array([[0.1, -0.05, 0.0, 0.2]])
    expected = stats.multivariate_normal(data.summary, 0.02 * np.eye(4)).logpdf(s[0])
    assert data.log_kernel(s)[0] == pytest.approx(expected)


def test_kernel_average_matches_gaussian_convolution():
    # oracle: for S ~ N(m, V), E[N(s_obs; S, K)] = N(s_obs; m, V + K)
    data = AbcData.from_observations(np.linspace(-2, 2, 40) ** 3, 0.05 * np.eye(4))
    m = data.summary + 0.1
    v = np.diag([0.02, 0.03, 0.01, 0.04])
    rng = np.random.default_rng(6)
    draws = rng.multivariate_normal(m, v, size=100_000)
    k = np.exp(data.log_kernel(draws))
    oracle = stats.multivariate_normal(m, v + data.kernel_cov).pdf(data.summary)
    assert mc_close(k.mean(), oracle, k.std(ddof=1) / np.sqrt(k.shape[0]))


def test_abc_estimate_averages_kernel_over_pseudo_datasets():
    y = alpha_stable_simulate(1.5, 0.5, 1.0, 0.0, 200, np.random.default_rng(2))
    data = AbcData.from_observations(y)

    def sim(theta, shape, rng):
        return alpha_stable_simulate(*theta, shape, rng)

    theta = (1.5, 0.5, 1.0, 0.0)
    got = abc_estimate(data, sim, theta, 7, np.random.default_rng(3)).log_value
    pseudo = sim(theta, (7, 200), np.random.default_rng(3))
    expected = log_mean_exp(data.log_kernel(abc_summaries(pseudo, data.gamma_hat_obs)))
    assert got == pytest.approx(expected)


def test_abc_estimate_floors_when_nothing_matches():
    y = alpha_stable_simulate(1.5, 0.0, 1.0, 0.0, 100, np.random.default_rng(2))
    data = AbcData.from_observations(y, 1e-6 * np.eye(4))
    est = AbcEstimator(data, lambda t, shape, rng: rng.normal(1e6, 1.0, size=shape), 3)
    out = est.estimate(np.zeros(4), np.random.default_rng(0))
    assert out.floored and out.log_value == LOG_FLOOR


def test_tilde_maps_round_trip():
    for theta in [(1.5, 0.5, 1.0, 0.0), (1.9, -0.8, 0.2, 3.0), (1.2, 0.0, 5.0, -1.0)]:
        np.testing.assert_allclose(tilde_to_stable(stable_to_tilde(*theta)), theta, rtol=1e-12, atol=1e-12)
    alpha, beta, gamma, _ = tilde_to_stable([-50.0, 50.0, 0.0, 0.0])
    assert 1.1 < alpha and beta <= 1.0 and gamma == 1.0


# --- marginal refinement ---------------------------------------------------------


def test_refine_estimate_is_unbiased_for_a_gaussian_marginal():
    # y | theta_j, r ~ N(theta_j + r, 1), r ~ N(0, 1)  =>  y | theta_j ~ N(theta_j, 2)
    y = 0.7
    joint = lambda th: stats.norm.logpdf(y, th[:, 0] + th[:, 1], 1.0)  # noqa: E731
    prior = lambda rest, tj: stats.norm.logpdf(rest[:, 0], 0.0, 1.0)  # noqa: E731
    proposal = MvnFactor.from_moments([0.3], [[2.0]])
    theta_j = 0.2
    exact = stats.norm.logpdf(y, theta_j, np.sqrt(2.0))
    rng = np.random.default_rng(10)
    vals = [marginal_refine_estimate(joint, proposal, prior, theta_j, 5, rng).log_value for _ in range(20_000)]
    assert ratio_check(vals, exact)


def test_refine_without_nuisance_returns_the_joint():
    joint = lambda th: -0.5 * th[:, 0] ** 2  # noqa: E731
    out = marginal_refine_estimate(joint, None, None, 2.0, 10, np.random.default_rng(0))
    assert out.log_value == pytest.approx(-2.0)


def test_refine_with_exact_proposal_has_zero_variance():
    # proposal equal to the normalised integrand gives constant weights
    joint = lambda th: stats.norm.logpdf(th[:, 1], 1.0, 2.0)  # noqa: E731
    proposal = MvnFactor.from_moments([1.0], [[4.0]])
    out = marginal_refine_estimate(joint, proposal, None, 0.0, 50, np.random.default_rng(0))
    assert out.log_value == pytest.approx(0.0, abs=1e-10)
    assert out.var_log_estimate == pytest.approx(0.0, abs=1e-10)


# --- CSV formats ---------------------------------------------------------------


def test_panel_csv_round_trip(tmp_path, small_panels):
    path = tmp_path / "p.csv"
    io.write_panel_csv(path, small_panels, comment="hello")
    assert path.read_text().startswith("# hello\npanel_id,y,x1,x2\n")
    back = io.read_panel_csv(path)
    np.testing.assert_array_equal(back.y, small_panels.y)
    np.testing.assert_array_equal(back.X, small_panels.X)


def test_series_and_abc_csv_round_trip(tmp_path):
    y = np.random.default_rng(0).standard_normal(20)
    io.write_series_csv(tmp_path / "s.csv", y)
    np.testing.assert_array_equal(io.read_series_csv(tmp_path / "s.csv"), y)
    io.write_abc_csv(tmp_path / "a.csv", y, comment="x")
    np.testing.assert_array_equal(io.read_abc_csv(tmp_path / "a.csv"), y)


def test_csv_readers_reject_wrong_layout(tmp_path):
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ContractError):
        io.read_series_csv(tmp_path / "bad.csv")
    (tmp_path / "empty.csv").write_text("")
    with pytest.raises(ContractError):
        io.read_abc_csv(tmp_path / "empty.csv")
