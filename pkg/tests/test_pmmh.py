from dataclasses import replace

import numpy as np
import pytest
from scipy import integrate, stats

from vbil.errors import ContractError, NumericalAbort
from vbil.likelihood.synthetic import SyntheticNoiseEstimator
from vbil.models import bernoulli_beta_spec
from vbil.pmmh import chain_summary, kde_summary, run_pmmh

from .conftest import mc_close

N, K = 200, 57
POST = stats.beta(K + 1, N - K + 1)


def _batch_means_se(x, n_batches=50):
    b = np.array_split(np.asarray(x), n_batches)
    means = np.array([v.mean() for v in b])
    return means.std(ddof=1) / np.sqrt(n_batches)


@pytest.mark.parametrize("sigma2", [0.0, 1.0])
def test_bernoulli_chain_targets_the_posterior(sigma2):
    # oracle: conjugate Beta(k + 1, n - k + 1) posterior
    spec = bernoulli_beta_spec(N, K)
    est = SyntheticNoiseEstimator(spec.exact_loglik, sigma2)
    chain = run_pmmh(spec, 20_000, 2_000, seed=4, estimator=est, init=[0.3], init_cov=[[0.05]])
    x = chain.kept[:, 0]
    assert mc_close(x.mean(), POST.mean(), _batch_means_se(x))
    assert mc_close(x.var(), POST.var(), _batch_means_se((x - POST.mean()) ** 2))
    assert 0.05 < chain.acceptance_rate < 0.9


def test_zero_noise_matches_the_exact_chain():
    spec = bernoulli_beta_spec(N, K)
    exact = run_pmmh(spec, 2_000, 500, seed=9)
    noiseless = run_pmmh(spec, 2_000, 500, seed=9, estimator=SyntheticNoiseEstimator(spec.exact_loglik, 0.0))
    np.testing.assert_array_equal(exact.draws, noiseless.draws)
    np.testing.assert_array_equal(exact.accepted, noiseless.accepted)


def test_stored_estimate_is_reused_until_acceptance():
    spec = bernoulli_beta_spec(N, K)
    chain = run_pmmh(spec, 1_000, 200, seed=1, estimator=SyntheticNoiseEstimator(spec.exact_loglik, 2.0))
    same = ~chain.accepted[1:]
    np.testing.assert_array_equal(chain.log_lik[1:][same], chain.log_lik[:-1][same])
    np.testing.assert_array_equal(chain.draws[1:][same], chain.draws[:-1][same])


def test_proposal_is_frozen_after_burn_in():
    spec = bernoulli_beta_spec(N, K)
    a = run_pmmh(spec, 3_000, 1_000, seed=2)
    b = run_pmmh(spec, 4_000, 1_000, seed=2)
    np.testing.assert_array_equal(a.proposal_cov, b.proposal_cov)
    np.testing.assert_array_equal(a.draws, b.draws[:3_000])


def test_burn_in_must_be_shorter_than_chain():
    spec = bernoulli_beta_spec(N, K)
    with pytest.raises(ContractError):
        run_pmmh(spec, 100, 100, seed=0)


def test_zero_prior_start_is_rejected():
    spec = bernoulli_beta_spec(N, K)
    with pytest.raises(ContractError):
        run_pmmh(spec, 100, 10, seed=0, init=[1.0])


def test_stuck_chain_aborts():
    # the estimator always underflows, so no proposal beats the stored value
    spec = bernoulli_beta_spec(N, K)

    class Hopeless(SyntheticNoiseEstimator):
        def estimate(self, theta, rng):
            out = super().estimate(theta, rng)
            self.calls += 1
            return replace(out, log_value=-1e300 if self.calls > 1 else 0.0)

    est = Hopeless(spec.exact_loglik, 0.0)
    est.calls = 0
    with pytest.raises(NumericalAbort):
        run_pmmh(spec, 5_000, 100, seed=0, estimator=est, max_rejections=300)


def test_kde_summary_of_standard_normal():
    x = np.random.default_rng(0).standard_normal(20_000)
    s = kde_summary(x, "z")
    assert s.name == "z"
    assert integrate.trapezoid(s.density, s.grid) == pytest.approx(1.0, abs=1e-3)
    mid = np.abs(s.grid) < 2
    np.testing.assert_allclose(s.density[mid], stats.norm.pdf(s.grid[mid]), atol=0.02)


def test_kde_summary_of_constant_is_a_spike():
    s = kde_summary(np.full(50, 3.0))
    assert s.sd == 0.0 and s.mean == 3.0
    k = int(np.argmax(s.density))
    assert s.grid[k] == 3.0
    assert np.count_nonzero(s.density) == 1


def test_chain_summary_applies_transform_and_needs_draws():
    spec = bernoulli_beta_spec(N, K)
    chain = run_pmmh(spec, 600, 100, seed=3)
    out = chain_summary(chain, transform=lambda t: 2 * t, names=["twice"])
    assert out[0].name == "twice"
    assert out[0].mean == pytest.approx(2 * chain.kept[:, 0].mean())
    short = run_pmmh(spec, 150, 100, seed=3)
    with pytest.raises(ContractError):
        chain_summary(short)
