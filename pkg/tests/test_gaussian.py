import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from distsmd.density import GaussianDensity, VariableLayout, marginalize
from distsmd.errors import CurvatureError, LayoutError
from distsmd.gaussian import (IndexMaps, LinearGaussianLogLikelihood, LinearGaussianModel, LogisticLogLikelihood,
                              MonteCarlo, Unscented, ZeroLogLikelihood, build_index_maps, diag_gvi_kernel,
                              diag_mix, expected_grad_hess, gaussian_marginal_mix, gvi_update,
                              linear_gaussian_posterior)
from distsmd.network import Network
from helpers import moments, random_spd


def prior(rng, k=2):
    return GaussianDensity.from_moments(("w",), (k,), rng.normal(size=k), random_spd(rng, k))


@given(st.integers(0, 10_000))
def test_posterior_matches_moment_form(seed):
    # Kalman update in covariance form as the oracle
    rng = np.random.default_rng(seed)
    p = prior(rng, 3)
    H = rng.normal(size=(2, 3))
    R = random_spd(rng, 2)
    model = LinearGaussianModel(("w",), (3,), H, np.linalg.inv(R))
    z = rng.normal(size=2)
    post = linear_gaussian_posterior(p, model, z)
    m, P = moments(p)
    K = P @ H.T @ np.linalg.inv(H @ P @ H.T + R)
    np.testing.assert_allclose(post.mean, m + K @ (z - H @ m), atol=1e-9)
    np.testing.assert_allclose(post.covariance, (np.eye(3) - K @ H) @ P, atol=1e-9)


def test_tempered_posterior_is_power(rng):
    p = prior(rng)
    model = LinearGaussianModel(("w",), (2,), np.eye(2), np.eye(2))
    z = np.array([0.3, -0.2])
    half = linear_gaussian_posterior(p, model, z, 0.5)
    again = linear_gaussian_posterior(half, model, z, 0.5)
    full = linear_gaussian_posterior(p, model, z, 1.0)
    np.testing.assert_allclose(again.info_matrix, full.info_matrix, atol=1e-12)
    assert linear_gaussian_posterior(p, model, z, 0.0) is p


def test_model_validation(rng):
    with pytest.raises(LayoutError):
        LinearGaussianModel(("w",), (2,), np.ones((1, 3)), np.eye(1))
    p = prior(rng)
    model = LinearGaussianModel(("w",), (2,), np.ones((1, 2)), np.eye(1))
    with pytest.raises(LayoutError):
        linear_gaussian_posterior(p, model, np.zeros(2))


def test_gvi_linear_gaussian_is_exact(rng):
    # with a quadratic log-likelihood the posterior-gain GVI step is Bayes' rule
    p = prior(rng, 2)
    H, V, z = rng.normal(size=(3, 2)), np.diag([1.0, 2.0, 0.5]), rng.normal(size=3)
    gvi = gvi_update(p, LinearGaussianLogLikelihood(H, V, z))
    exact = linear_gaussian_posterior(p, LinearGaussianModel(("w",), (2,), H, V), z)
    np.testing.assert_allclose(gvi.info_matrix, exact.info_matrix, atol=1e-10)
    np.testing.assert_allclose(gvi.mean, exact.mean, atol=1e-10)


def test_gvi_zero_loglik_identity(rng):
    p = prior(rng)
    q = gvi_update(p, ZeroLogLikelihood(2))
    np.testing.assert_allclose(q.mean, p.mean)


def test_logistic_expectations_agree(rng):
    phi = rng.normal(size=(4, 3))
    y = np.array([1.0, 0.0, 1.0, 1.0])
    ll = LogisticLogLikelihood(phi, y)
    mean, cov = rng.normal(size=3) * 0.3, 0.2 * np.eye(3)
    g_a, h_a = expected_grad_hess(ll, mean, cov, "analytic")
    g_m, h_m = expected_grad_hess(ll, mean, cov, MonteCarlo(n_samples=200_000, seed=0))
    np.testing.assert_allclose(g_a, g_m, atol=2e-2)
    np.testing.assert_allclose(h_a, h_m, atol=2e-2)


def test_unscented_exact_for_quadratic(rng):
    H, V, z = rng.normal(size=(2, 3)), np.diag([1.0, 3.0]), rng.normal(size=2)
    ll = LinearGaussianLogLikelihood(H, V, z)
    mean, cov = rng.normal(size=3), random_spd(rng, 3)
    g_u, h_u = expected_grad_hess(ll, mean, cov, Unscented())
    g_a, h_a = expected_grad_hess(ll, mean, cov, "analytic")
    np.testing.assert_allclose(g_u, g_a, atol=1e-8)
    np.testing.assert_allclose(h_u, h_a, atol=1e-8)


def test_logistic_gradient_finite_difference(rng):
    phi, y = rng.normal(size=(3, 2)), np.array([1.0, 0.0, 1.0])
    ll = LogisticLogLikelihood(phi, y)
    x = rng.normal(size=2)
    g, h = ll.grad_hess(x)
    eps = 1e-6
    fd = [(ll.value(x + eps * e) - ll.value(x - eps * e)) / (2 * eps) for e in np.eye(2)]
    np.testing.assert_allclose(g[0], fd, atol=1e-6)
    assert np.all(np.linalg.eigvalsh(h[0]) <= 1e-12)


def test_diag_kernel_matches_full_on_diagonal(rng):
    phi, y = rng.normal(size=(1, 3)), np.array([1.0])
    ll = LogisticLogLikelihood(phi, y)
    mu, om = rng.normal(size=3), np.array([1.0, 2.0, 3.0])
    m_d, o_d = diag_gvi_kernel(mu, om, ll)
    g, h = ll.expected_grad_hess(mu, np.diag(1 / om))
    np.testing.assert_allclose(o_d, om - np.diag(h))
    np.testing.assert_allclose(m_d, mu + g / o_d)
    assert diag_gvi_kernel(mu, om, None) == (mu, om)


def test_diag_kernel_curvature_error():
    class Bad:
        def expected_grad_hess_diag(self, mean, var):
            return np.zeros_like(mean), np.full_like(mean, 10.0)
    with pytest.raises(CurvatureError):
        diag_gvi_kernel(np.zeros(2), np.ones(2), Bad())


def test_index_maps_and_diag_mix():
    layout = VariableLayout({"a": 1, "b": 1, "c": 1}, {0: ("a", "b"), 1: ("b", "c")})
    maps = build_index_maps(layout, Network(np.full((2, 2), 0.5)))
    m = maps[(0, 1)]
    assert isinstance(m, IndexMaps)
    np.testing.assert_array_equal(m.R, [[0, 0], [1, 0]])
    np.testing.assert_array_equal(m.S, [[1, 0], [0, 0]])
    means = [np.array([1.0, 2.0]), np.array([4.0, 6.0])]
    precs = [np.array([1.0, 1.0]), np.array([3.0, 1.0])]
    mu, om = diag_mix(means, precs, [(0, 0.5), (1, 0.5)], maps, 0)
    # private entry untouched; shared entry is the precision-weighted average
    assert mu[0] == pytest.approx(1.0) and om[0] == pytest.approx(1.0)
    assert om[1] == pytest.approx(2.0)
    assert mu[1] == pytest.approx((0.5 * 1 * 2 + 0.5 * 3 * 4) / 2.0)


def test_gaussian_marginal_mix_coherent_fixed_point(rng):
    # coherent marginals of one joint are a fixed point of marginal mixing
    joint = GaussianDensity.from_moments(("a", "b", "c"), (1, 1, 1), rng.normal(size=3), random_spd(rng, 3))
    p0 = marginalize(joint, ("a", "b"))
    msg = marginalize(joint, ("b",))
    v = gaussian_marginal_mix(p0, {1: msg}, {0: 0.5, 1: 0.5}, self_id=0)
    np.testing.assert_allclose(v.info_matrix, p0.info_matrix, atol=1e-10)
    np.testing.assert_allclose(v.info_vector, p0.info_vector, atol=1e-10)
