import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import logsumexp as scipy_logsumexp

from distsmd.density import GaussianDensity, marginalize
from distsmd.errors import BoundedGradientError, LayoutError, NumericalError, UnderflowError
from distsmd.grid import (Axis, GridDensity, arithmetic_average, expand, geometric_average, grid_bayes_update,
                          grid_condition, grid_conditional_marginal_product, grid_geometric_mix, grid_kl,
                          grid_marginalize, grid_tv, logsumexp)

AX = (Axis("a", -2.0, 2.0, 9), Axis("b", -1.0, 3.0, 7))


def rand_grid(rng, axes=AX):
    log = rng.normal(size=tuple(a.n for a in axes))
    return GridDensity.from_log_unnormalized(axes, log)[0]


def test_axis_width():
    assert Axis("a", 0.0, 1.0, 11).width == pytest.approx(0.1)
    with pytest.raises(LayoutError):
        Axis("a", 1.0, 0.0, 5)


@given(st.integers(0, 10_000))
def test_logsumexp_matches_scipy(seed):
    a = np.random.default_rng(seed).normal(scale=30, size=(4, 5))
    np.testing.assert_allclose(logsumexp(a), scipy_logsumexp(a), rtol=1e-12)
    np.testing.assert_allclose(logsumexp(a, axis=1), scipy_logsumexp(a, axis=1), rtol=1e-12)


def test_logsumexp_all_minus_inf():
    assert logsumexp(np.full(3, -np.inf)) == -np.inf


def test_normalisation(rng):
    p = rand_grid(rng)
    assert p.probabilities.sum() == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(NumericalError):
        GridDensity(AX, np.zeros((9, 7)))


def test_uniform_and_nan():
    u = GridDensity.uniform(AX)
    assert u.probabilities.sum() == pytest.approx(1.0)
    with pytest.raises(NumericalError):
        GridDensity.from_log_unnormalized(AX, np.full((9, 7), np.nan))
    with pytest.raises(UnderflowError):
        GridDensity.from_log_unnormalized(AX, np.full((9, 7), -np.inf))


def test_bayes_update(rng):
    p = rand_grid(rng)
    field = rng.normal(size=p.shape)
    assert grid_bayes_update(p, field, 0.0) is p
    q = grid_bayes_update(p, field, 0.5)
    expected = p.probabilities * np.exp(0.5 * field)
    np.testing.assert_allclose(q.probabilities, expected / expected.sum(), rtol=1e-12)
    with pytest.raises(BoundedGradientError):
        grid_bayes_update(p, np.full(p.shape, np.inf), 1.0)


def test_geometric_mix_log_z_nonpositive(rng):
    # Hoelder: the geometric mean of densities has total mass at most one
    ds = [rand_grid(rng) for _ in range(4)]
    w = rng.dirichlet(np.ones(4))
    g, log_z = grid_geometric_mix(ds, w)
    assert log_z <= 1e-12
    _, log_z_same = grid_geometric_mix([ds[0]] * 3, [0.2, 0.3, 0.5])
    assert log_z_same == pytest.approx(0.0, abs=1e-12)


def test_geometric_mix_zero_cell():
    log = np.zeros((9, 7))
    log[0, 0] = -np.inf
    p = GridDensity.from_log_unnormalized(AX, log)[0]
    with pytest.raises(UnderflowError):
        grid_geometric_mix([p, GridDensity.uniform(AX)], [0.5, 0.5])


def test_marginalize_sums_cells(rng):
    p = rand_grid(rng)
    m = grid_marginalize(p, ("b",))
    np.testing.assert_allclose(m.probabilities, p.probabilities.sum(axis=0), rtol=1e-12)


def test_condition_times_marginal_reconstructs(rng):
    p = rand_grid(rng)
    back = grid_condition(p, ("b",)).times(grid_marginalize(p, ("b",)))
    np.testing.assert_allclose(back.log_density, p.log_density, atol=1e-12)


def test_conditional_marginal_product(rng):
    p = rand_grid(rng)
    nb = rand_grid(rng, AX[1:])
    out = grid_conditional_marginal_product(p, nb)
    np.testing.assert_allclose(grid_marginalize(out, ("b",)).probabilities, nb.probabilities, atol=1e-12)


def test_kl_tv(rng):
    p, g = rand_grid(rng), rand_grid(rng)
    assert grid_kl(p, p) == 0.0
    assert 0 < grid_tv(p, g) <= 1
    assert 2 * grid_tv(p, g) ** 2 <= grid_kl(p, g)
    # manual definitions
    pr, gr = p.probabilities, g.probabilities
    assert grid_kl(p, g) == pytest.approx(np.sum(pr * np.log(pr / gr)), rel=1e-10)
    assert grid_tv(p, g) == pytest.approx(0.5 * np.abs(pr - gr).sum(), rel=1e-10)


def test_aligned_permutation(rng):
    p = rand_grid(rng)
    q = GridDensity(AX[::-1], p.log_density.T)
    assert grid_kl(p, q) == pytest.approx(0.0, abs=1e-14)


def test_mismatched_axes(rng):
    p = rand_grid(rng)
    other = (Axis("a", -2.0, 2.0, 9), Axis("b", -1.0, 3.0, 8))
    with pytest.raises(LayoutError):
        grid_kl(p, rand_grid(rng, other))


def test_expand_broadcast():
    vals = np.arange(7.0)
    full = expand(vals, ("b",), AX)
    assert full.shape == (9, 7)
    np.testing.assert_array_equal(full[3], vals)


def test_gaussian_discretisation_moments():
    g = GaussianDensity.from_moments(("a", "b"), (1, 1), [0.2, -0.1], [[0.3, 0.1], [0.1, 0.2]])
    axes = (Axis("a", -4.0, 4.0, 161), Axis("b", -4.0, 4.0, 161))
    d = GridDensity.from_gaussian(g, axes)
    np.testing.assert_allclose(d.mean(), g.mean, atol=1e-8)
    m = grid_marginalize(d, ("b",))
    ref = GridDensity.from_gaussian(marginalize(g, ("b",)), axes[1:])
    assert grid_kl(m, ref) < 1e-10


def test_averages(rng):
    ds = [rand_grid(rng) for _ in range(3)]
    a = arithmetic_average(ds)
    np.testing.assert_allclose(a.probabilities, np.mean([d.probabilities for d in ds], axis=0), rtol=1e-12)
    g = geometric_average(ds)
    assert g.probabilities.sum() == pytest.approx(1.0)
