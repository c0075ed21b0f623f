"""Brute-force densities on rectangular grids.

Every grid density stores log density values at the grid nodes; a node
stands for a cell of width ``(hi - lo) / (n - 1)`` per axis, so
``sum(exp(log_density)) * cell_volume == 1``.  All pooling happens in the
log domain with log-sum-exp normalisation.  These routines are the
independent oracle for the closed-form Gaussian algebra and the playground
for the consensus propositions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BoundedGradientError, LayoutError, NumericalError, UnderflowError

NORM_TOL = 1e-9


def logsumexp(a, axis=None):
    # scipy.special.logsumexp costs ~0.3 ms per call on small arrays, which
    # dominates long grid runs; this is the same max-shift computation.
    a = np.asarray(a, dtype=float)
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return out.item() if axis is None else np.squeeze(out, axis=axis)


@dataclass(frozen=True)
class Axis:
    var: object
    lo: float
    hi: float
    n: int

    def __post_init__(self):
        if self.n < 2 or not self.hi > self.lo:
            raise LayoutError(f"degenerate axis {self}")

    @property
    def points(self):
        return np.linspace(self.lo, self.hi, self.n)

    @property
    def width(self):
        return (self.hi - self.lo) / (self.n - 1)


class GridDensity:
    """Normalised density on the product grid spanned by ``axes``."""

    __slots__ = ("axes", "log_density")

    def __init__(self, axes, log_density, *, validate=True):
        axes = tuple(axes)
        log_density = np.asarray(log_density, dtype=float)
        shape = tuple(a.n for a in axes)
        if log_density.shape != shape:
            raise LayoutError(f"log density of shape {log_density.shape}, axes give {shape}")
        if len({a.var for a in axes}) != len(axes):
            raise LayoutError("duplicate grid axes")
        if validate:
            if np.any(np.isnan(log_density)) or np.any(log_density == np.inf):
                raise NumericalError("grid log density has NaN or +inf entries")
            total = np.exp(logsumexp(log_density)) * _cell_volume(axes)
            if abs(total - 1.0) > NORM_TOL:
                raise NumericalError(f"grid density integrates to {total!r}")
        log_density.setflags(write=False)
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "log_density", log_density)

    def __setattr__(self, name, value):
        raise AttributeError("GridDensity is immutable")

    def __repr__(self):
        return f"GridDensity(vars={self.vars}, shape={self.shape})"

    @property
    def vars(self):
        return tuple(a.var for a in self.axes)

    @property
    def shape(self):
        return self.log_density.shape

    @property
    def cell_volume(self):
        return _cell_volume(self.axes)

    @property
    def mass(self):
        """Density values at the grid nodes (integrate with ``cell_volume``)."""
        return np.exp(self.log_density)

    @property
    def probabilities(self):
        return self.mass * self.cell_volume

    def points(self):
        """Node coordinates, shape ``shape + (ndim,)``."""
        return np.stack(np.meshgrid(*[a.points for a in self.axes], indexing="ij"), axis=-1)

    def mean(self):
        pts = self.points()
        return np.tensordot(self.probabilities, pts, axes=(tuple(range(len(self.axes))),
                                                           tuple(range(len(self.axes)))))

    def axis_of(self, var):
        for a in self.axes:
            if a.var == var:
                return a
        raise LayoutError(f"no axis for variable {var!r}")

    def expectation(self, field):
        """Integral of ``field`` against the density."""
        return float(np.sum(self.probabilities * field))

    @classmethod
    def from_log_unnormalized(cls, axes, log_values):
        """Normalise arbitrary log values; returns (density, log normaliser)."""
        axes = tuple(axes)
        log_values = np.asarray(log_values, dtype=float)
        if np.all(log_values == -np.inf):
            raise UnderflowError("all grid cells have zero mass")
        if np.any(np.isnan(log_values)) or np.any(log_values == np.inf):
            raise NumericalError("log values have NaN or +inf entries")
        log_z = float(logsumexp(log_values) + np.log(_cell_volume(axes)))
        # normalised by construction, so the integral check is skipped
        return cls(axes, log_values - log_z, validate=False), log_z

    @classmethod
    def uniform(cls, axes):
        axes = tuple(axes)
        return cls(axes, np.full(tuple(a.n for a in axes), -np.log(_total_volume(axes))))

    @classmethod
    def from_gaussian(cls, gaussian, axes):
        """Discretise a Gaussian over scalar variables onto ``axes``."""
        axes = tuple(axes)
        if any(d != 1 for d in gaussian.dims):
            raise LayoutError("grid discretisation needs scalar variables")
        g = gaussian.reorder(tuple(a.var for a in axes))
        pts = np.stack(np.meshgrid(*[a.points for a in axes], indexing="ij"), axis=-1)
        return cls.from_log_unnormalized(axes, g.logpdf(pts))[0]

    def aligned(self, other):
        """Return ``other`` with axes permuted into this density's order."""
        if other.vars == self.vars:
            if other.axes != self.axes:
                raise LayoutError("grid axes differ")
            return other
        if set(other.vars) != set(self.vars):
            raise LayoutError(f"grids over {self.vars} and {other.vars}")
        perm = [other.vars.index(v) for v in self.vars]
        axes = tuple(other.axes[k] for k in perm)
        if axes != self.axes:
            raise LayoutError("grid axes differ")
        return GridDensity(axes, np.transpose(other.log_density, perm), validate=False)


def _cell_volume(axes):
    return math.prod(a.width for a in axes)


def _total_volume(axes):
    return math.prod(a.width * a.n for a in axes)


def expand(log_values, sub_vars, axes):
    """Broadcast an array over ``sub_vars`` to the full grid spanned by ``axes``."""
    full_vars = [a.var for a in axes]
    sub_vars = list(sub_vars)
    missing = [v for v in sub_vars if v not in full_vars]
    if missing:
        raise LayoutError(f"variables {missing} are not grid axes")
    order = sorted(range(len(sub_vars)), key=lambda k: full_vars.index(sub_vars[k]))
    arr = np.transpose(np.asarray(log_values), order)
    shape = [1] * len(axes)
    for k in order:
        pos = full_vars.index(sub_vars[k])
        shape[pos] = axes[pos].n
    return np.broadcast_to(arr.reshape(shape), tuple(a.n for a in axes))


def grid_kl(p, g):
    g = p.aligned(g)
    prob = p.probabilities
    support = prob > 0
    if np.any(support & (g.log_density == -np.inf)):
        return np.inf
    diff = p.log_density[support] - g.log_density[support]
    return max(float(np.sum(prob[support] * diff)), 0.0)


def grid_tv(p, g):
    g = p.aligned(g)
    return float(min(0.5 * np.sum(np.abs(p.mass - g.mass)) * p.cell_volume, 1.0))


def grid_bayes_update(prior, loglik, alpha):
    """Tempered Bayes step: mass proportional to exp(alpha * loglik) * prior."""
    loglik = np.broadcast_to(np.asarray(loglik, dtype=float), prior.shape)
    if alpha < 0:
        raise LayoutError("step size must be nonnegative")
    if not np.all(np.isfinite(loglik)):
        raise BoundedGradientError("log-likelihood field has non-finite entries")
    if alpha == 0:
        return prior
    return GridDensity.from_log_unnormalized(prior.axes, prior.log_density + alpha * loglik)[0]


def grid_geometric_mix(densities, weights):
    """Cellwise weighted geometric mean, renormalised; returns (density, log Z)."""
    densities = list(densities)
    weights = np.asarray(weights, dtype=float).reshape(-1)
    if not densities or len(weights) != len(densities):
        raise LayoutError("need one weight per density")
    if np.any(weights < 0):
        raise LayoutError("weights must be nonnegative")
    ref = densities[0]
    acc = np.zeros(ref.shape)
    for w, d in zip(weights, densities):
        d = ref.aligned(d)
        if w == 0.0:
            continue
        if np.any(d.log_density == -np.inf):
            raise UnderflowError("zero-mass cell in geometric pooling")
        acc = acc + w * d.log_density
    return GridDensity.from_log_unnormalized(ref.axes, acc)


def grid_marginalize(p, keep):
    keep = tuple(keep)
    if not keep:
        raise LayoutError("cannot marginalize onto an empty variable set")
    unknown = [v for v in keep if v not in p.vars]
    if unknown:
        raise LayoutError(f"unknown variables {unknown}")
    keep_set = set(keep)
    drop_axes = tuple(k for k, a in enumerate(p.axes) if a.var not in keep_set)
    if not drop_axes:
        return p
    log_w = np.log(_cell_volume([p.axes[k] for k in drop_axes]))
    axes = tuple(a for a in p.axes if a.var in keep_set)
    log_m = logsumexp(p.log_density, axis=drop_axes) + log_w
    return GridDensity.from_log_unnormalized(axes, log_m)[0]


@dataclass(frozen=True)
class GridConditional:
    """Log conditional density of the free axes given ``given`` on a full grid."""

    axes: tuple
    given: tuple
    log_values: np.ndarray

    def times(self, marginal):
        """Multiply by a density over ``given`` that lives on the same axes."""
        for v in marginal.vars:
            if marginal.axis_of(v) != next(a for a in self.axes if a.var == v):
                raise LayoutError(f"axis of {v!r} differs")
        if set(marginal.vars) != set(self.given):
            raise LayoutError(f"marginal over {marginal.vars}, expected {self.given}")
        log_joint = self.log_values + expand(marginal.log_density, marginal.vars, self.axes)
        with np.errstate(invalid="ignore"):
            log_joint = np.where(np.isnan(log_joint), -np.inf, log_joint)
        return GridDensity.from_log_unnormalized(self.axes, log_joint)[0]


def grid_condition(p, given):
    given = tuple(v for v in p.vars if v in set(given))
    if len(given) == len(p.vars):
        raise LayoutError("cannot condition on every variable")
    marg = grid_marginalize(p, given)
    log_m = expand(marg.log_density, marg.vars, p.axes)
    with np.errstate(invalid="ignore"):
        log_c = np.where(log_m == -np.inf, -np.inf, p.log_density - log_m)
    return GridConditional(p.axes, given, log_c)


def grid_conditional_marginal_product(p_self, p_neighbor_marginal):
    shared = p_neighbor_marginal.vars
    if any(v not in p_self.vars for v in shared):
        raise LayoutError("neighbour marginal variables are not held by this agent")
    if len(shared) == len(p_self.vars):
        return p_self.aligned(p_neighbor_marginal)
    return grid_condition(p_self, shared).times(p_neighbor_marginal)


def geometric_average(densities):
    """Network-wide geometric average prod p_i^(1/n), renormalised."""
    n = len(densities)
    return grid_geometric_mix(densities, np.full(n, 1.0 / n))[0]


def arithmetic_average(densities):
    ref = densities[0]
    mass = np.mean([ref.aligned(d).mass for d in densities], axis=0)
    with np.errstate(divide="ignore"):
        return GridDensity.from_log_unnormalized(ref.axes, np.log(mass))[0]
