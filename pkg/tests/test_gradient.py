import numpy as np
import pytest

from vbil.errors import ConditioningError, ContractError
from vbil.expfam import BetaFactor, InverseGammaFactor, MvnFactor, ProductFamily
from vbil.gradient import (
    CLIP_FACTOR,
    CvState,
    SampleSet,
    clip,
    cv_gradient,
    factor_gradient,
    integrand,
    naive_gradient,
    natural_transform,
    update_cv_constants,
)
from vbil.likelihood.base import LOG_FLOOR
from vbil.models.bernoulli import bernoulli_beta_spec, kl_beta_gradient
from vbil.optimizer import draw_samples

from .conftest import mc_close

N, K = 200, 57
A0, B0 = K + 1.0, N - K + 1.0


def _bernoulli_samples(shapes, S, seed=0):
    spec = bernoulli_beta_spec(N, K, init=shapes)
    return spec.family, draw_samples(spec, spec.family, S, np.random.SeedSequence(seed), use_rqmc=False)


def test_naive_gradient_is_unbiased_for_the_kl_gradient():
    # oracle: closed-form gradient of KL(Beta(a, b) || Beta(k+1, n-k+1))
    fam, ss = _bernoulli_samples((5.0, 5.0), 400_000)
    per = ss.score * (ss.log_q - ss.h)[:, None]
    g = naive_gradient(fam, ss).grad
    assert mc_close(g, kl_beta_gradient(5.0, 5.0, A0, B0), per.std(axis=0) / np.sqrt(ss.S))


def test_fixed_constants_keep_the_gradient_unbiased():
    fam, ss = _bernoulli_samples((20.0, 40.0), 200_000, seed=1)
    c = np.array([3.0, -7.0])
    per = ss.score * ((ss.log_q - ss.h)[:, None] - c)
    g = cv_gradient(fam, ss, CvState(c, True)).grad
    assert mc_close(g, kl_beta_gradient(20.0, 40.0, A0, B0), per.std(axis=0) / np.sqrt(ss.S))


def test_cv_constants_follow_the_covariance_formula():
    fam, ss = _bernoulli_samples((4.0, 9.0), 500, seed=2)
    F = ss.log_q - ss.h
    expected = [np.cov(ss.score[:, i] * F, ss.score[:, i])[0, 1] / np.var(ss.score[:, i], ddof=1) for i in range(2)]
    np.testing.assert_allclose(update_cv_constants(fam, ss).c, expected, rtol=1e-10)


def test_optimal_constants_reduce_variance():
    fam, pilot = _bernoulli_samples((2.0, 2.0), 2000, seed=3)
    cv = update_cv_constants(fam, pilot)
    _, ss = _bernoulli_samples((2.0, 2.0), 2000, seed=4)
    F = (ss.log_q - ss.h)[:, None]
    naive = (ss.score * F).var(axis=0)
    with_cv = (ss.score * (F - cv.c)).var(axis=0)
    assert np.all(with_cv < naive)


def test_zero_score_variance_keeps_previous_constant():
    fam = ProductFamily([BetaFactor([2.0, 2.0])])
    thetas = np.full((4, 1), 0.3)
    ss = SampleSet.build(fam, thetas, np.zeros(4), np.zeros(4))
    prev = CvState(np.array([1.5, -2.5]), True)
    np.testing.assert_array_equal(update_cv_constants(fam, ss, prev).c, prev.c)


def test_cv_update_needs_two_samples():
    fam = ProductFamily([BetaFactor([2.0, 2.0])])
    ss = SampleSet.build(fam, np.array([[0.4]]), np.zeros(1), np.zeros(1))
    with pytest.raises(ContractError):
        update_cv_constants(fam, ss)


def test_natural_transform_of_exact_gradient_is_lambda_minus_optimum():
    # for a conjugate target the KL gradient is I_F (lambda - lambda*)
    for a, b in [(5.0, 5.0), (120.0, 30.0), (1.3, 0.8)]:
        d = natural_transform(ProductFamily([BetaFactor([a, b])]), kl_beta_gradient(a, b, A0, B0))
        np.testing.assert_allclose(d, [a - A0, b - B0], rtol=1e-9, atol=1e-9)


def test_natural_transform_reports_bad_conditioning():
    fam = ProductFamily([BetaFactor([1e-3, 1e9])])
    with pytest.raises(ConditioningError):
        natural_transform(fam, np.ones(2))


def test_clip_bounds_the_norm():
    d, clipped = clip(np.array([1e6, -1e6, 0.0]))
    assert clipped
    assert np.linalg.norm(d) == pytest.approx(CLIP_FACTOR * 3)
    np.testing.assert_allclose(d / np.linalg.norm(d), np.array([1, -1, 0]) / np.sqrt(2))
    small = np.array([1.0, 2.0])
    out, clipped = clip(small)
    assert not clipped
    np.testing.assert_array_equal(out, small)


def _two_factor_samples(S, seed):
    fam = ProductFamily([MvnFactor.from_moments([0.2], [[0.5]]), InverseGammaFactor([6.0, 4.0])])
    rng = np.random.default_rng(seed)
    thetas = fam.sample(rng.random((S, fam.n_uniforms)))
    # prior: N(0, 1) x IG(2, 1); likelihood couples both coordinates
    lp = np.column_stack([-0.5 * thetas[:, 0] ** 2, -3 * np.log(thetas[:, 1]) - 1 / thetas[:, 1]])
    ll = -0.5 * (1.0 - thetas[:, 0]) ** 2 / thetas[:, 1] - 0.5 * np.log(thetas[:, 1])
    return fam, SampleSet.build(fam, thetas, ll, lp)


def test_factorised_and_full_gradients_share_their_mean():
    # the dropped terms are independent of the factor's score under q
    fam, ss = _two_factor_samples(200_000, 5)
    full = ss.score * integrand(fam, ss, False)
    fact = ss.score * integrand(fam, ss, True)
    diff = full - fact
    assert mc_close(diff.mean(axis=0), 0.0, diff.std(axis=0) / np.sqrt(ss.S))


def test_single_factor_factorised_equals_full():
    fam, ss = _bernoulli_samples((5.0, 5.0), 100, seed=6)
    np.testing.assert_allclose(integrand(fam, ss, True), integrand(fam, ss, False))


def test_factor_gradient_matches_factorised_block():
    fam, ss = _two_factor_samples(500, 7)
    cv = update_cv_constants(fam, ss, factorized=True)
    full = cv_gradient(fam, ss, cv, factorized=True).grad
    for k in range(2):
        h_k = ss.log_prior_blocks[:, k] + ss.log_lik
        np.testing.assert_allclose(factor_gradient(fam, ss, k, h_k, cv), full[fam.param_slices[k]])


def test_factorised_needs_split_prior():
    fam, ss = _two_factor_samples(10, 8)
    joint = SampleSet.build(fam, ss.thetas, ss.log_lik, ss.log_prior_blocks.sum(axis=1))
    with pytest.raises(ContractError):
        integrand(fam, joint, True)


def test_prior_outside_support_is_floored():
    fam = ProductFamily([BetaFactor([2.0, 2.0])])
    ss = SampleSet.build(fam, np.array([[0.2], [0.7]]), np.zeros(2), np.array([-np.inf, np.nan]))
    np.testing.assert_array_equal(ss.log_prior_blocks[:, 0], [LOG_FLOOR, LOG_FLOOR])
    assert np.all(np.isfinite(naive_gradient(fam, ss).grad))
