"""Gaussian densities in information form and their exact algebra.

A :class:`GaussianDensity` stores ``(Omega, eta)`` with ``eta = Omega @ mean``
over an ordered tuple of named variables, each of which may be a vector.
Products, tempering and geometric pooling are additive in these parameters,
which is why every estimator in the package works in this form.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Mapping

import numpy as np
from scipy import stats

from .errors import LayoutError, NumericalError

PD_FLOOR = 1e-12
SYM_RTOL = 1e-12


def _symmetrize(m):
    return 0.5 * (m + m.T)


def check_positive_definite(matrix, what="information matrix"):
    """Raise :class:`NumericalError` unless ``matrix`` is symmetric PD.

    Eigenvalues must exceed ``PD_FLOOR * max(1, largest eigenvalue)``.
    """
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise LayoutError(f"{what} must be square, got shape {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise NumericalError(f"{what} has non-finite entries")
    scale = max(1.0, float(np.max(np.abs(matrix)))) if matrix.size else 1.0
    if np.max(np.abs(matrix - matrix.T), initial=0.0) > SYM_RTOL * scale:
        raise NumericalError(f"{what} is not symmetric")
    if matrix.size == 0:
        return
    eig = np.linalg.eigvalsh(matrix)
    if eig[0] <= PD_FLOOR * max(1.0, eig[-1]):
        raise NumericalError(
            f"{what} is not positive definite (min eigenvalue {eig[0]:.3e})")


@dataclass(frozen=True)
class VariableLayout:
    """Global variable registry plus the relevant subset of each agent.

    ``variables`` maps variable id to its dimension, in global order.
    ``agent_subsets`` maps agent id to the ids that agent estimates; they are
    stored in global order regardless of how they were passed.
    """

    variables: Mapping[Hashable, int]
    agent_subsets: Mapping[Hashable, tuple]

    def __post_init__(self):
        variables = dict(self.variables)
        for v, dim in variables.items():
            if int(dim) != dim or dim < 1:
                raise LayoutError(f"variable {v!r} has invalid dimension {dim!r}")
        order = {v: k for k, v in enumerate(variables)}
        subsets = {}
        for agent, subset in dict(self.agent_subsets).items():
            subset = list(subset)
            if not subset:
                raise LayoutError(f"agent {agent!r} has an empty variable subset")
            if len(set(subset)) != len(subset):
                raise LayoutError(f"agent {agent!r} lists a variable twice")
            unknown = [v for v in subset if v not in order]
            if unknown:
                raise LayoutError(f"agent {agent!r} references unknown variables {unknown}")
            subsets[agent] = tuple(sorted(subset, key=order.__getitem__))
        covered = set().union(*subsets.values()) if subsets else set()
        missing = [v for v in variables if v not in covered]
        if missing:
            raise LayoutError(f"variables {missing} are estimated by no agent")
        object.__setattr__(self, "variables", variables)
        object.__setattr__(self, "agent_subsets", subsets)

    @property
    def agents(self):
        return tuple(self.agent_subsets)

    @property
    def total_dim(self):
        return sum(self.variables.values())

    def dims(self, variables):
        return tuple(self.variables[v] for v in variables)

    def ordered(self, variables):
        """Return ``variables`` sorted into global order."""
        variables = set(variables)
        return tuple(v for v in self.variables if v in variables)

    def shared(self, i, j):
        """Variables common to agents ``i`` and ``j`` (X_ij), in global order."""
        other = set(self.agent_subsets[j])
        return tuple(v for v in self.agent_subsets[i] if v in other)

    def agent_dim(self, i):
        return sum(self.variables[v] for v in self.agent_subsets[i])

    def storage(self):
        """Return (sum of per-agent dimensions, n_agents * total dimension)."""
        marginal = sum(self.agent_dim(i) for i in self.agents)
        return marginal, len(self.agents) * self.total_dim

    @classmethod
    def full(cls, variables, agents):
        variables = dict(variables)
        return cls(variables, {a: tuple(variables) for a in agents})


class GaussianDensity:
    """Multivariate normal over named variables, stored as (Omega, Omega @ mean).

    Instances are immutable; every operation returns a new density.
    """

    __slots__ = ("vars", "dims", "info_matrix", "info_vector", "_offsets", "_cache")

    def __init__(self, vars, dims, info_matrix, info_vector, *, validate=True):
        vars = tuple(vars)
        dims = tuple(int(d) for d in dims)
        if len(vars) != len(dims):
            raise LayoutError("vars and dims differ in length")
        if len(set(vars)) != len(vars):
            raise LayoutError(f"duplicate variables in {vars}")
        if any(d < 1 for d in dims):
            raise LayoutError(f"invalid dimensions {dims}")
        info_matrix = np.array(info_matrix, dtype=float, ndmin=2)
        info_vector = np.array(info_vector, dtype=float).reshape(-1)
        total = sum(dims)
        if info_matrix.shape != (total, total) or info_vector.shape != (total,):
            raise LayoutError(
                f"parameters of shape {info_matrix.shape}, {info_vector.shape} "
                f"do not match total dimension {total}")
        if validate:
            check_positive_definite(info_matrix)
            if not np.all(np.isfinite(info_vector)):
                raise NumericalError("information vector has non-finite entries")
        info_matrix.setflags(write=False)
        info_vector.setflags(write=False)
        object.__setattr__(self, "vars", vars)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "info_matrix", info_matrix)
        object.__setattr__(self, "info_vector", info_vector)
        object.__setattr__(self, "_offsets", np.concatenate([[0], np.cumsum(dims)]).astype(int))
        object.__setattr__(self, "_cache", {})

    def __setattr__(self, name, value):
        raise AttributeError("GaussianDensity is immutable")

    def __repr__(self):
        return f"GaussianDensity(vars={self.vars}, mean={np.round(self.mean, 4).tolist()})"

    @classmethod
    def from_moments(cls, vars, dims, mean, cov):
        cov = np.array(cov, dtype=float, ndmin=2)
        check_positive_definite(cov, "covariance")
        omega = _symmetrize(np.linalg.inv(cov))
        return cls(vars, dims, omega, omega @ np.asarray(mean, dtype=float).reshape(-1))

    @classmethod
    def scalar(cls, var, mean, info):
        return cls((var,), (1,), [[info]], [info * mean])

    @property
    def dim(self):
        return int(self._offsets[-1])

    @property
    def mean(self):
        if "mean" not in self._cache:
            m = np.linalg.solve(self.info_matrix, self.info_vector)
            if not np.all(np.isfinite(m)):
                raise NumericalError("mean is not finite")
            m.setflags(write=False)
            self._cache["mean"] = m
        return self._cache["mean"]

    @property
    def covariance(self):
        if "cov" not in self._cache:
            c = _symmetrize(np.linalg.inv(self.info_matrix))
            c.setflags(write=False)
            self._cache["cov"] = c
        return self._cache["cov"]

    def dim_of(self, var):
        return self.dims[self.vars.index(var)]

    def index(self, variables):
        """Flat parameter indices of ``variables`` (in the order given)."""
        key = ("index",) + tuple(variables)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        pos = {v: k for k, v in enumerate(self.vars)}
        try:
            idx = np.concatenate(
                [np.arange(self._offsets[pos[v]], self._offsets[pos[v] + 1]) for v in variables]
            ).astype(int) if variables else np.zeros(0, dtype=int)
        except KeyError as exc:
            raise LayoutError(f"unknown variable {exc.args[0]!r} for density over {self.vars}") from None
        idx.setflags(write=False)
        self._cache[key] = idx
        return idx

    def reorder(self, variables):
        """Same density with variables permuted into ``variables`` order."""
        variables = tuple(variables)
        if variables == self.vars:
            return self
        if set(variables) != set(self.vars) or len(variables) != len(self.vars):
            raise LayoutError(f"cannot reorder {self.vars} into {variables}")
        idx = self.index(variables)
        return GaussianDensity(variables, [self.dim_of(v) for v in variables],
                               self.info_matrix[np.ix_(idx, idx)], self.info_vector[idx],
                               validate=False)

    def logpdf(self, x):
        """Log density at points ``x`` of shape (..., dim)."""
        x = np.asarray(x, dtype=float)
        if "logdet" not in self._cache:
            self._cache["logdet"] = np.linalg.slogdet(self.info_matrix)[1]
        diff = x - self.mean
        quad = np.einsum("...i,ij,...j->...", diff, self.info_matrix, diff)
        return 0.5 * (self._cache["logdet"] - self.dim * np.log(2 * np.pi) - quad)

    def allclose(self, other, rtol=1e-10, atol=1e-12):
        other = other.reorder(self.vars)
        return (np.allclose(self.info_matrix, other.info_matrix, rtol=rtol, atol=atol)
                and np.allclose(self.info_vector, other.info_vector, rtol=rtol, atol=atol))


def _same_vars(p, g):
    if set(p.vars) != set(g.vars) or len(p.vars) != len(g.vars):
        raise LayoutError(f"densities over different variables: {p.vars} vs {g.vars}")
    g = g.reorder(p.vars)
    if g.dims != p.dims:
        raise LayoutError(f"dimension mismatch {p.dims} vs {g.dims}")
    return g


def kl_divergence(p, g):
    """KL[p, g] between two Gaussian densities over the same variables."""
    from .grid import GridDensity, grid_kl

    if isinstance(p, GridDensity) or isinstance(g, GridDensity):
        return grid_kl(p, g)
    g = _same_vars(p, g)
    k = p.dim
    sp, ldp = np.linalg.slogdet(p.info_matrix)
    sg, ldg = np.linalg.slogdet(g.info_matrix)
    if sp <= 0 or sg <= 0:
        raise NumericalError("singular information matrix in KL")
    diff = g.mean - p.mean
    trace = np.trace(np.linalg.solve(p.info_matrix, g.info_matrix))
    kl = 0.5 * (trace + diff @ g.info_matrix @ diff - k + ldp - ldg)
    return max(float(kl), 0.0)


def _whitened_pair(p, g):
    """Map p to N(0, I) and g accordingly; TV is invariant under this map."""
    chol = np.linalg.cholesky(p.info_matrix)  # Omega_p = L L^T, so z = L^T (x - mu_p)
    mg = chol.T @ (g.mean - p.mean)
    sg = chol.T @ g.covariance @ chol
    return mg, _symmetrize(sg)


def _gaussian_tv_on_grid(mg, sg, n):
    d = len(mg)
    sd = np.sqrt(np.diag(sg))
    lo = np.minimum(-6.0, mg - 6.0 * sd)
    hi = np.maximum(6.0, mg + 6.0 * sd)
    axes = [np.linspace(lo[k], hi[k], n) for k in range(d)]
    h = np.prod([(hi[k] - lo[k]) / (n - 1) for k in range(d)])
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    logp = stats.multivariate_normal(np.zeros(d), np.eye(d)).logpdf(pts)
    logg = stats.multivariate_normal(mg, sg).logpdf(pts)
    return 0.5 * float(np.sum(np.abs(np.exp(logp) - np.exp(logg)))) * h


_TV_MAX_POINTS = {1: 6401, 2: 801, 3: 201}


def tv_distance(p, g, tol=1e-4, n_points=101):
    """Total variation distance, in [0, 1].

    Grids use the exact cell sum.  Gaussians (up to three scalar dimensions)
    use quadrature on a grid spanning +-6 standard deviations of both
    arguments, refined until two successive resolutions agree within ``tol``.
    """
    from .grid import GridDensity, grid_tv

    if isinstance(p, GridDensity) or isinstance(g, GridDensity):
        return grid_tv(p, g)
    g = _same_vars(p, g)
    if p.dim > 3:
        raise LayoutError(f"Gaussian TV quadrature supports at most 3 dimensions, got {p.dim}")
    if p.dim == 0:
        return 0.0
    mg, sg = _whitened_pair(p, g)
    if np.allclose(mg, 0.0, atol=1e-14) and np.allclose(sg, np.eye(p.dim), atol=1e-13):
        return 0.0
    n = max(int(n_points), 101)
    coarse = _gaussian_tv_on_grid(mg, sg, n)
    limit = _TV_MAX_POINTS[p.dim]
    while True:
        n_fine = 2 * n - 1
        fine = _gaussian_tv_on_grid(mg, sg, n_fine)
        if abs(fine - coarse) < tol or n_fine >= limit:
            return float(min(max(fine, 0.0), 1.0))
        n, coarse = n_fine, fine


def geometric_mean(densities, weights):
    """Weighted geometric pooling of Gaussians, renormalized.

    Information parameters combine linearly: ``Omega = sum w_j Omega_j`` and
    ``eta = sum w_j eta_j``.  Weight vectors that sum to less than one are
    accepted and use the same rule.
    """
    densities = list(densities)
    weights = np.asarray(weights, dtype=float).reshape(-1)
    if not densities or len(densities) != len(weights):
        raise LayoutError("need one weight per density")
    if np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise LayoutError("weights must be finite and nonnegative")
    if not np.any(weights > 0):
        raise LayoutError("at least one weight must be positive")
    ref = densities[0]
    omega = np.zeros_like(ref.info_matrix)
    eta = np.zeros_like(ref.info_vector)
    for w, d in zip(weights, densities):
        d = _same_vars(ref, d)
        if w == 0.0:
            continue
        omega = omega + w * d.info_matrix
        eta = eta + w * d.info_vector
    # a positive combination of PD matrices is PD
    return GaussianDensity(ref.vars, ref.dims, _symmetrize(omega), eta, validate=False)


def marginalize(p, keep):
    """Marginal of ``p`` over ``keep`` by Schur complement in information form."""
    keep = tuple(keep)
    if not keep:
        raise LayoutError("cannot marginalize onto an empty variable set")
    unknown = [v for v in keep if v not in p.vars]
    if unknown:
        raise LayoutError(f"unknown variables {unknown} for density over {p.vars}")
    keep = tuple(v for v in p.vars if v in set(keep))
    if len(keep) == len(p.vars):
        return p
    drop = tuple(v for v in p.vars if v not in set(keep))
    ik, id_ = p.index(keep), p.index(drop)
    omega, eta = p.info_matrix, p.info_vector
    okd = omega[np.ix_(ik, id_)]
    odd = omega[np.ix_(id_, id_)]
    gain = np.linalg.solve(odd, okd.T).T  # Omega_kd Omega_dd^{-1}
    m_omega = _symmetrize(omega[np.ix_(ik, ik)] - gain @ okd.T)
    m_eta = eta[ik] - gain @ eta[id_]
    # Schur complements of a PD matrix are PD
    return GaussianDensity(keep, [p.dim_of(v) for v in keep], m_omega, m_eta, validate=False)


@dataclass(frozen=True)
class ConditionalGaussian:
    """Linear-Gaussian conditional p(free | given).

    For an assignment ``x_given`` the conditional has information matrix
    ``info_free`` and information vector ``eta_free - cross @ x_given``.
    """

    free: tuple
    free_dims: tuple
    given: tuple
    given_dims: tuple
    info_free: np.ndarray
    cross: np.ndarray
    eta_free: np.ndarray

    def at(self, x_given):
        x_given = np.asarray(x_given, dtype=float).reshape(-1)
        if x_given.shape != (sum(self.given_dims),):
            raise LayoutError("assignment does not match conditioning variables")
        return GaussianDensity(self.free, self.free_dims, self.info_free,
                               self.eta_free - self.cross @ x_given)

    def times(self, marginal):
        """Joint density p(free | given) * marginal(given), in (free, given) order."""
        if set(marginal.vars) != set(self.given):
            raise LayoutError(f"marginal over {marginal.vars}, expected {self.given}")
        marginal = marginal.reorder(self.given)
        if marginal.dims != self.given_dims:
            raise LayoutError("marginal dimensions do not match conditioning variables")
        gain = np.linalg.solve(self.info_free, self.cross).T  # Omega_21 Omega_11^{-1}
        og = _symmetrize(marginal.info_matrix + gain @ self.cross)
        eg = marginal.info_vector + gain @ self.eta_free
        omega = np.block([[self.info_free, self.cross], [self.cross.T, og]])
        eta = np.concatenate([self.eta_free, eg])
        # the Schur complement of info_free is the marginal's PD information matrix
        return GaussianDensity(self.free + self.given, self.free_dims + self.given_dims,
                               _symmetrize(omega), eta, validate=False)


def condition(p, given):
    """Conditional of the remaining variables of ``p`` given ``given``."""
    given_set = set(given)
    unknown = [v for v in given if v not in p.vars]
    if unknown:
        raise LayoutError(f"unknown variables {unknown} for density over {p.vars}")
    free = tuple(v for v in p.vars if v not in given_set)
    given = tuple(v for v in p.vars if v in given_set)
    if not free:
        raise LayoutError("cannot condition on every variable")
    i1, i2 = p.index(free), p.index(given)
    return ConditionalGaussian(
        free, tuple(p.dim_of(v) for v in free), given, tuple(p.dim_of(v) for v in given),
        p.info_matrix[np.ix_(i1, i1)].copy(), p.info_matrix[np.ix_(i1, i2)].copy(),
        p.info_vector[i1].copy())


def conditional_marginal_product(p_self, p_neighbor_marginal):
    """Replace the shared-variable marginal of ``p_self`` by the neighbour's.

    Returns ``p_self(private | shared) * p_neighbor_marginal(shared)`` over the
    variables of ``p_self`` in their original order.
    """
    shared = p_neighbor_marginal.vars
    missing = [v for v in shared if v not in p_self.vars]
    if missing:
        raise LayoutError(f"neighbour marginal variables {missing} not held by this agent")
    for v in shared:
        if p_self.dim_of(v) != p_neighbor_marginal.dim_of(v):
            raise LayoutError(f"dimension of {v!r} differs between agents")
    if len(shared) == len(p_self.vars):
        return p_neighbor_marginal.reorder(p_self.vars)
    return condition(p_self, shared).times(p_neighbor_marginal).reorder(p_self.vars)


def embed(p, variables, dims, info=0.0):
    """Return information parameters of ``p`` lifted to a superset of variables.

    Variables absent from ``p`` receive zero information (or ``info * I``).
    Only the raw arrays are returned since the lifted form may be singular.
    """
    variables = tuple(variables)
    total = sum(dims)
    offsets = np.concatenate([[0], np.cumsum(dims)]).astype(int)
    pos = {v: k for k, v in enumerate(variables)}
    idx = np.concatenate([np.arange(offsets[pos[v]], offsets[pos[v] + 1]) for v in p.vars])
    omega = info * np.eye(total)
    eta = np.zeros(total)
    omega[np.ix_(idx, idx)] += p.info_matrix
    eta[idx] += p.info_vector
    return omega, eta
