"""Closed-form Gaussian updates: linear likelihoods, marginal mixing and GVI."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .density import (GaussianDensity, _symmetrize, check_positive_definite,
                      conditional_marginal_product, geometric_mean)
from .errors import CurvatureError, LayoutError, NumericalError


@dataclass(frozen=True, eq=False)
class LinearGaussianModel:
    """Likelihood ``z ~ N(H x, V^{-1})`` where ``x`` stacks ``vars``.

    ``V`` is the measurement information matrix (inverse noise covariance).
    """

    vars: tuple
    dims: tuple
    H: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        H = np.array(self.H, dtype=float, ndmin=2)
        V = np.array(self.V, dtype=float, ndmin=2)
        object.__setattr__(self, "vars", tuple(self.vars))
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if H.shape[1] != sum(self.dims):
            raise LayoutError(f"H has {H.shape[1]} columns for variables of total dim {sum(self.dims)}")
        if V.shape != (H.shape[0], H.shape[0]):
            raise LayoutError("V must be square with one row per measurement component")
        check_positive_definite(V, "measurement information")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "V", V)

    def lifted_H(self, density):
        """Observation matrix acting on all parameters of ``density``."""
        H = np.zeros((self.H.shape[0], density.dim))
        col = 0
        for v, d in zip(self.vars, self.dims):
            if density.dim_of(v) != d:
                raise LayoutError(f"dimension of {v!r} differs between model and density")
            H[:, density.index([v])] = self.H[:, col:col + d]
            col += d
        return H

    def sample(self, x, rng):
        """Draw a measurement given the stacked true value ``x`` of ``vars``."""
        noise = rng.multivariate_normal(np.zeros(len(self.V)), np.linalg.inv(self.V))
        return self.H @ np.asarray(x, dtype=float) + noise

    def loglik(self, x, z):
        r = np.asarray(z) - np.asarray(x) @ self.H.T
        _, logdet = np.linalg.slogdet(self.V)
        return 0.5 * (logdet - len(self.V) * np.log(2 * np.pi)
                      - np.einsum("...i,ij,...j->...", r, self.V, r))


def linear_gaussian_posterior(prior, model, z, alpha=1.0):
    """Tempered Bayes update: ``Omega + alpha H'VH`` and ``eta + alpha H'Vz``."""
    if alpha < 0:
        raise LayoutError("alpha must be nonnegative")
    z = np.asarray(z, dtype=float).reshape(-1)
    if z.shape != (model.H.shape[0],):
        raise LayoutError(f"measurement of shape {z.shape}, model expects {model.H.shape[0]}")
    if not np.all(np.isfinite(z)) or not np.isfinite(alpha):
        raise NumericalError("non-finite measurement or step size")
    if alpha == 0:
        return prior
    missing = [v for v in model.vars if v not in prior.vars]
    if missing:
        raise LayoutError(f"model variables {missing} not in the prior")
    H = model.lifted_H(prior)
    HtV = H.T @ model.V
    # PD prior plus a PSD term stays PD
    return GaussianDensity(prior.vars, prior.dims,
                           _symmetrize(prior.info_matrix + alpha * HtV @ H),
                           prior.info_vector + alpha * HtV @ z, validate=False)


def gaussian_marginal_mix(self_density, neighbor_marginals, weights, self_id=None):
    """Marginal density mixing at one agent.

    ``neighbor_marginals`` maps neighbour id to that neighbour's marginal over
    the shared variables; ``weights`` maps agent id (including ``self_id``)
    to its mixing weight.  Each marginal is merged with this agent's own
    conditional and the results are pooled geometrically.
    """
    pooled, w = [], []
    for j, wj in weights.items():
        if j == self_id:
            pooled.append(self_density)
        else:
            if j not in neighbor_marginals:
                raise LayoutError(f"missing marginal from neighbour {j!r}")
            m = neighbor_marginals[j]
            pooled.append(self_density if not m.vars else conditional_marginal_product(self_density, m))
        w.append(wj)
    return geometric_mean(pooled, w)


# --- Gaussian variational inference ------------------------------------------

class LogLikelihood:
    """Twice differentiable log-likelihood in the estimated variables.

    Subclasses implement :meth:`grad_hess` for a batch of points and may
    override :meth:`expected_grad_hess` with a closed form.
    """

    def value(self, x):
        raise NotImplementedError

    def grad_hess(self, x):
        """Return gradients (k, d) and Hessians (k, d, d) at points ``x`` (k, d)."""
        raise NotImplementedError

    def expected_grad_hess(self, mean, cov):
        raise NotImplementedError(f"{type(self).__name__} has no analytic expectation")


class ZeroLogLikelihood(LogLikelihood):
    def __init__(self, dim):
        self.dim = dim

    def value(self, x):
        return np.zeros(np.shape(x)[:-1])

    def grad_hess(self, x):
        x = np.atleast_2d(x)
        return np.zeros_like(x), np.zeros(x.shape + (x.shape[1],))

    def expected_grad_hess(self, mean, cov):
        return np.zeros(self.dim), np.zeros((self.dim, self.dim))


class LinearGaussianLogLikelihood(LogLikelihood):
    def __init__(self, H, V, z):
        self.H = np.atleast_2d(np.asarray(H, dtype=float))
        self.V = np.atleast_2d(np.asarray(V, dtype=float))
        self.z = np.asarray(z, dtype=float).reshape(-1)

    def value(self, x):
        r = self.z - np.asarray(x) @ self.H.T
        return -0.5 * np.einsum("...i,ij,...j->...", r, self.V, r)

    def grad_hess(self, x):
        x = np.atleast_2d(x)
        g = (self.z - x @ self.H.T) @ self.V @ self.H
        h = -self.H.T @ self.V @ self.H
        return g, np.broadcast_to(h, (len(x),) + h.shape)

    def expected_grad_hess(self, mean, cov):
        return self.grad_hess(mean[None])[0][0], -self.H.T @ self.V @ self.H


_GH_NODES, _GH_WEIGHTS = np.polynomial.hermite_e.hermegauss(40)
_GH_WEIGHTS = _GH_WEIGHTS / _GH_WEIGHTS.sum()


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


class LogisticLogLikelihood(LogLikelihood):
    """Bernoulli log-likelihood ``y log s(phi'w) + (1-y) log(1-s(phi'w))``.

    ``features`` may hold several rows; contributions are summed.
    """

    def __init__(self, features, labels):
        self.features = np.atleast_2d(np.asarray(features, dtype=float))
        self.labels = np.asarray(labels, dtype=float).reshape(-1)
        if len(self.labels) != len(self.features):
            raise LayoutError("one label per feature row required")

    def value(self, x):
        a = np.asarray(x) @ self.features.T
        return np.sum(self.labels * -np.logaddexp(0, -a) + (1 - self.labels) * -np.logaddexp(0, a), axis=-1)

    def grad_hess(self, x):
        x = np.atleast_2d(x)
        a = x @ self.features.T                      # (k, m)
        s = _sigmoid(a)
        g = (self.labels - s) @ self.features         # (k, d)
        c = s * (1 - s)
        h = -np.einsum("km,mi,mj->kij", c, self.features, self.features)
        return g, h

    def expected_coefficients(self, mean, var_a):
        """E[y - s(a)] and E[s'(a)] for a ~ N(mean, var_a), per feature row."""
        a = mean[:, None] + np.sqrt(np.maximum(var_a, 0.0))[:, None] * _GH_NODES[None, :]
        s = _sigmoid(a)
        e_res = self.labels - s @ _GH_WEIGHTS
        e_curv = (s * (1 - s)) @ _GH_WEIGHTS
        return e_res, e_curv

    def expected_grad_hess(self, mean, cov):
        phi = self.features
        m = phi @ mean
        var = np.einsum("mi,ij,mj->m", phi, cov, phi)
        e_res, e_curv = self.expected_coefficients(m, var)
        return e_res @ phi, -np.einsum("m,mi,mj->ij", e_curv, phi, phi)

    def expected_grad_hess_diag(self, mean, var):
        """Expected gradient and Hessian diagonal under N(mean, diag(var))."""
        phi = self.features
        m = phi @ mean
        v = (phi * phi) @ var
        e_res, e_curv = self.expected_coefficients(m, v)
        return e_res @ phi, -(e_curv @ (phi * phi))


@dataclass(frozen=True)
class Unscented:
    """Sigma-point expectation with 2d+1 points."""

    alpha: float = 1e-3
    beta: float = 2.0
    kappa: float = 0.0

    def points(self, mean, cov):
        d = len(mean)
        lam = self.alpha ** 2 * (d + self.kappa) - d
        root = np.linalg.cholesky((d + lam) * cov)
        pts = np.vstack([mean, mean + root.T, mean - root.T])
        wm = np.full(2 * d + 1, 1.0 / (2 * (d + lam)))
        wm[0] = lam / (d + lam)
        return pts, wm


@dataclass(frozen=True)
class MonteCarlo:
    n_samples: int = 10_000
    seed: int = 0


@dataclass(frozen=True)
class Analytic:
    pass


def expected_grad_hess(loglik, mean, cov, rule):
    if isinstance(rule, str):
        rule = {"analytic": Analytic(), "unscented": Unscented(), "monte-carlo": MonteCarlo()}[rule]
    if isinstance(rule, Analytic):
        return loglik.expected_grad_hess(mean, cov)
    if isinstance(rule, Unscented):
        pts, wm = rule.points(mean, cov)
        g, h = loglik.grad_hess(pts)
        return wm @ g, np.tensordot(wm, h, axes=1)
    if isinstance(rule, MonteCarlo):
        rng = np.random.default_rng(rule.seed)
        pts = rng.multivariate_normal(mean, cov, size=rule.n_samples)
        g, h = loglik.grad_hess(pts)
        return g.mean(axis=0), h.mean(axis=0)
    raise LayoutError(f"unknown expectation rule {rule!r}")


def gvi_update(prior, loglik, expectation_rule="analytic", alpha=1.0, gain="posterior"):
    """Gaussian variational update with expected gradient and Hessian.

    ``Omega' = Omega - alpha E[hess]``; the mean moves by
    ``alpha E[grad]`` scaled by the inverse of the new information matrix
    (``gain="posterior"``) or of the prior one (``gain="prior"``).
    Expectations are taken under ``prior``.
    """
    g, h = expected_grad_hess(loglik, prior.mean, prior.covariance, expectation_rule)
    omega = _symmetrize(prior.info_matrix - alpha * h)
    try:
        check_positive_definite(omega)
    except NumericalError as exc:
        raise CurvatureError(f"GVI update lost positive definiteness: {exc}") from None
    basis = omega if gain == "posterior" else prior.info_matrix
    mean = prior.mean + np.linalg.solve(basis, alpha * g)
    return GaussianDensity(prior.vars, prior.dims, omega, omega @ mean)


# --- diagonal partial-consensus step -----------------------------------------

@dataclass(frozen=True)
class IndexMaps:
    """Index alignment between agent ``i`` and neighbour ``j``.

    ``shared_i[k]`` and ``shared_j[k]`` are local indices of the same scalar
    variable; ``distinct_i`` are agent i's indices not held by j.
    """

    d_i: int
    d_j: int
    shared_i: np.ndarray
    shared_j: np.ndarray
    distinct_i: np.ndarray

    @property
    def R(self):
        r = np.zeros((self.d_i, self.d_j))
        r[self.shared_i, self.shared_j] = 1.0
        return r

    @property
    def S(self):
        s = np.zeros((self.d_i, self.d_i))
        s[self.distinct_i, self.distinct_i] = 1.0
        return s

    @classmethod
    def between(cls, layout, i, j):
        vi, vj = layout.agent_subsets[i], layout.agent_subsets[j]
        if any(layout.variables[v] != 1 for v in vi + vj):
            raise LayoutError("index maps need scalar variables")
        pos_j = {v: k for k, v in enumerate(vj)}
        shared = [(k, pos_j[v]) for k, v in enumerate(vi) if v in pos_j]
        distinct = [k for k, v in enumerate(vi) if v not in pos_j]
        si = np.array([a for a, _ in shared], dtype=int)
        sj = np.array([b for _, b in shared], dtype=int)
        return cls(len(vi), len(vj), si, sj, np.array(distinct, dtype=int))


def build_index_maps(layout, network):
    return {(i, j): IndexMaps.between(layout, i, j)
            for i in range(network.n) for j in network.neighbors(i)}


def diag_mix(means, precisions, weights_row, maps, i):
    """Mixed (mean, precision) vectors at agent ``i`` from diagonal neighbours."""
    omega_v = np.zeros_like(precisions[i])
    eta_v = np.zeros_like(precisions[i])
    for j, a_ij in weights_row:
        if j == i:
            om, mu = precisions[i], means[i]
        else:
            m = maps[(i, j)]
            om = precisions[i].copy()
            mu = means[i].copy()
            om[m.shared_i] = precisions[j][m.shared_j]
            mu[m.shared_i] = means[j][m.shared_j]
        omega_v += a_ij * om
        eta_v += a_ij * om * mu
    return eta_v / omega_v, omega_v


def diag_gvi_step(states, network, layout, index_maps, logliks, rule="analytic", alpha=1.0):
    """One round of diagonal partial-consensus GVI for every agent.

    ``states`` are GaussianDensity objects with diagonal information
    matrices; ``logliks[i]`` is agent i's log-likelihood for this round
    (or ``None`` for no observation).
    """
    means, precs = [], []
    for i, s in enumerate(states):
        off = s.info_matrix - np.diag(np.diag(s.info_matrix))
        if np.any(off != 0):
            raise LayoutError(f"agent {i} information matrix is not diagonal")
        if s.vars != layout.agent_subsets[i]:
            raise LayoutError(f"agent {i} estimate variables do not match its subset")
        precs.append(np.diag(s.info_matrix).copy())
        means.append(s.info_vector / precs[-1])
    out = []
    for i in range(network.n):
        row = [(j, network.weights[i, j]) for j in network.neighbors(i)]
        mu_v, om_v = diag_mix(means, precs, row, index_maps, i)
        mu_new, om_new = diag_gvi_kernel(mu_v, om_v, logliks[i], rule, alpha)
        out.append(GaussianDensity(states[i].vars, states[i].dims, np.diag(om_new), om_new * mu_new))
    return out


def diag_gvi_kernel(mu_v, om_v, loglik, rule="analytic", alpha=1.0):
    """GVI likelihood step that keeps only the Hessian diagonal."""
    if loglik is None:
        return mu_v, om_v
    var = 1.0 / om_v
    if rule == "analytic" and hasattr(loglik, "expected_grad_hess_diag"):
        g, hdiag = loglik.expected_grad_hess_diag(mu_v, var)
    else:
        g, h = expected_grad_hess(loglik, mu_v, np.diag(var), rule)
        hdiag = np.diag(h)
    om_new = om_v - alpha * hdiag
    if np.any(om_new <= 0) or not np.all(np.isfinite(om_new)):
        raise CurvatureError("diagonal GVI update produced non-positive precision")
    return mu_v + alpha * g / om_new, om_new
