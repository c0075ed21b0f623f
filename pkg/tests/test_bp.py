import numpy as np
import pytest

from distsmd.bp import BPMessage, CircularBPConfig, PairwiseFactor, bp_round, circular_bp_round, message
from distsmd.density import GaussianDensity, marginalize
from distsmd.errors import LayoutError, MessageDegeneracyError
from distsmd.estimators import LinearEvidence, centralized_step
from distsmd.scenarios.localization import relative_model
from helpers import random_spd


def belief(rng, i, d=2):
    return GaussianDensity.from_moments((f"x{i}",), (d,), rng.normal(size=d), random_spd(rng, d))


def test_message_matches_moment_oracle(rng):
    # x_r = x_s - z' + noise, with x_s ~ p^g: x_r ~ N(mu_g - z', Sigma_g + Omega^-1)
    own = belief(rng, 0)
    inc = {1: BPMessage(1, 0, random_spd(rng, 2), rng.normal(size=2)),
           2: BPMessage(2, 0, random_spd(rng, 2), rng.normal(size=2))}
    om = random_spd(rng, 2)
    z = rng.normal(size=2)
    f = PairwiseFactor(0, 2, om, z)
    m = message((own.info_matrix, own.info_vector), inc, f, 0, 2)
    # the reverse message from 2 is excluded in standard BP
    om_g = own.info_matrix + inc[1].info_matrix
    mu_g = np.linalg.solve(om_g, own.info_vector + inc[1].info_vector)
    cov = np.linalg.inv(om_g) + np.linalg.inv(om)
    np.testing.assert_allclose(m.info_matrix, np.linalg.inv(cov), atol=1e-10)
    np.testing.assert_allclose(m.mean, mu_g - z, atol=1e-10)


def test_factor_orientation():
    f = PairwiseFactor(0, 1, np.eye(2), np.array([1.0, 2.0]))
    np.testing.assert_array_equal(f.oriented(1, 0)[1], [-1.0, -2.0])
    with pytest.raises(LayoutError):
        f.oriented(0, 2)


def test_circular_reverse_message_weighting(rng):
    own = belief(rng, 0)
    rev = BPMessage(1, 0, random_spd(rng, 2), rng.normal(size=2))
    f = PairwiseFactor(0, 1, np.eye(2), np.zeros(2))
    alpha = 0.8
    m = message((own.info_matrix, own.info_vector), {1: rev}, f, 0, 1, alpha)
    om_g = own.info_matrix + (1 - alpha) * rev.info_matrix
    mu_g = np.linalg.solve(om_g, own.info_vector + (1 - alpha) * rev.info_vector)
    np.testing.assert_allclose(m.mean, mu_g, atol=1e-10)


def test_circular_alpha_one_is_bp(rng):
    beliefs = {i: belief(rng, i) for i in range(3)}
    factors = {(0, 1): PairwiseFactor(0, 1, np.eye(2), rng.normal(size=2)),
               (1, 2): PairwiseFactor(1, 2, 2 * np.eye(2), rng.normal(size=2))}
    b1, o1 = bp_round(beliefs, {}, factors)
    b2, o2 = circular_bp_round(beliefs, {}, factors, CircularBPConfig(1.0))
    for k in o1:
        np.testing.assert_array_equal(o1[k].info_matrix, o2[k].info_matrix)
        np.testing.assert_array_equal(o1[k].info_vector, o2[k].info_vector)


def test_static_bp_exact_on_tree(rng):
    # chain 0-1-2-3 with relative factors; anchored prior on x0
    n = 4
    pos = rng.normal(size=(n, 2)) * 3
    pos[0] = 0
    priors = {i: GaussianDensity((f"x{i}",), (2,), np.eye(2) * (1e4 if i == 0 else 1e-2), np.zeros(2))
              for i in range(n)}
    factors, evidence = {}, []
    over = tuple(f"x{i}" for i in range(n))
    for i in range(n - 1):
        z = pos[i] - pos[i + 1] + 0.1 * rng.normal(size=2)
        factors[(i, i + 1)] = PairwiseFactor(i, i + 1, 4 * np.eye(2), z)
        evidence.append(LinearEvidence(relative_model(i, i + 1, 4.0, over), z))
    joint = GaussianDensity(over, (2,) * n,
                            np.diag(np.concatenate([np.diag(priors[i].info_matrix) for i in range(n)])),
                            np.zeros(2 * n))
    joint = centralized_step(joint, evidence, 1.0)
    beliefs, inbox = dict(priors), {}
    for _ in range(n + 1):
        beliefs, inbox = bp_round(beliefs, inbox, factors, self_terms=priors, compound=False)
    for i in range(n):
        exact = marginalize(joint, (f"x{i}",))
        np.testing.assert_allclose(beliefs[i].mean, exact.mean, atol=1e-9)
        np.testing.assert_allclose(beliefs[i].info_matrix, exact.info_matrix, rtol=1e-9)


def test_directed_factors_only_shape_own_messages(rng):
    beliefs = {i: belief(rng, i) for i in range(2)}
    factors = {(0, 1): PairwiseFactor(0, 1, np.eye(2), np.ones(2))}
    nbrs = {0: [1], 1: [0]}
    _, out = bp_round(beliefs, {}, factors, neighbors=nbrs, directed=True)
    assert (0, 1) in out and (1, 0) not in out
    _, out = bp_round(beliefs, {}, factors, neighbors=nbrs, directed=False)
    assert (1, 0) in out


def test_compound_accumulates_messages(rng):
    beliefs = {i: belief(rng, i) for i in range(2)}
    inbox = {(1, 0): BPMessage(1, 0, np.eye(2), np.ones(2))}
    nxt, _ = bp_round(beliefs, inbox, {}, neighbors={0: [1], 1: [0]})
    np.testing.assert_allclose(nxt[0].info_matrix, beliefs[0].info_matrix + np.eye(2))


def test_degenerate_message():
    with pytest.raises(MessageDegeneracyError):
        BPMessage(0, 1, -np.eye(2), np.zeros(2))
    with pytest.raises(MessageDegeneracyError):
        BPMessage(0, 1, np.eye(2), np.array([np.nan, 0.0]))
    v = BPMessage.vacuous(0, 1, 2)
    assert v.is_vacuous


def test_validation(rng):
    with pytest.raises(ValueError):
        CircularBPConfig(0.0)
    with pytest.raises(LayoutError):
        bp_round({0: belief(rng, 0)}, {}, {(0, 5): PairwiseFactor(0, 5, np.eye(2), np.zeros(2))})
    joint = GaussianDensity.from_moments(("x0", "x1"), (1, 1), [0, 0], np.eye(2))
    with pytest.raises(LayoutError):
        bp_round({0: joint}, {}, {})
