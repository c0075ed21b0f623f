"""Stochastic mirror descent estimators over Gaussian or grid densities.

The three step functions share one shape: optionally mix neighbour
estimates geometrically, then apply the tempered Bayes update
``p_next ~ q(z | X)^alpha * prior`` with the agent's own evidence.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .density import conditional_marginal_product, geometric_mean, marginalize
from .errors import LayoutError, ProtocolError
from .gaussian import LinearGaussianModel, gaussian_marginal_mix, linear_gaussian_posterior
from .grid import (GridDensity, expand, grid_bayes_update, grid_conditional_marginal_product,
                   grid_geometric_mix, grid_marginalize)


# --- step sizes -------------------------------------------------------------

@dataclass(frozen=True)
class RobbinsMonro:
    """``alpha_t = a / (b + t)^power``; square-summable, not summable for power in (1/2, 1]."""

    a: float = 1.0
    b: float = 1.0
    power: float = 0.75

    def __post_init__(self):
        if self.a <= 0 or self.b < 1 or not 0.5 < self.power <= 1.0:
            raise ValueError("need a > 0, b >= 1 and 1/2 < power <= 1")

    def __call__(self, t, state=None):
        return self.a / (self.b + t) ** self.power


@dataclass(frozen=True)
class Constant:
    alpha: float = 1.0

    def __call__(self, t, state=None):
        return self.alpha


@dataclass(frozen=True)
class AdaptiveOracle:
    """``alpha_t = margin * (f[p_t] - f_star) / (2 L^2)`` using a known objective."""

    L: float
    f_star: float
    objective: object
    margin: float = 0.99

    def __call__(self, t, state=None):
        if state is None:
            raise ValueError("adaptive schedule needs the current estimate")
        gap = self.objective(state) - self.f_star
        return max(self.margin * gap / (2.0 * self.L ** 2), 0.0)


def make_schedule(spec):
    """Parse ``"rm"``, ``"rm:a,b,power"``, ``"const:0.5"`` style schedule specs."""
    if not isinstance(spec, str):
        return spec
    kind, _, arg = spec.partition(":")
    args = [float(x) for x in arg.split(",")] if arg else []
    if kind in ("rm", "robbins-monro"):
        return RobbinsMonro(*args)
    if kind in ("const", "constant"):
        return Constant(*args)
    raise ValueError(f"unknown schedule {spec!r}")


# --- evidence ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GridEvidence:
    """Log-likelihood field ``log q_i(z | X_i)`` tabulated over the axes of ``vars``."""

    vars: tuple
    log_field: np.ndarray


@dataclass(frozen=True, eq=False)
class LinearEvidence:
    model: LinearGaussianModel
    z: np.ndarray


def apply_evidence(density, evidence, alpha):
    """Tempered Bayes update of one density; variables outside the evidence get none."""
    if evidence is None or alpha == 0:
        return density
    if isinstance(density, GridDensity):
        if not isinstance(evidence, GridEvidence):
            raise LayoutError("grid density needs grid evidence")
        field = expand(evidence.log_field, evidence.vars, density.axes)
        return grid_bayes_update(density, field, alpha)
    if isinstance(evidence, LinearEvidence):
        return linear_gaussian_posterior(density, evidence.model, evidence.z, alpha)
    raise LayoutError(f"unsupported evidence {type(evidence).__name__}")


def _check_alpha(alpha):
    if not alpha >= 0:
        raise LayoutError("alpha must be nonnegative")


# --- steps ------------------------------------------------------------------

def centralized_step(p, evidence, alpha):
    """One centralized SMD step; ``evidence`` may be a list (all agents' data)."""
    _check_alpha(alpha)
    items = evidence if isinstance(evidence, (list, tuple)) else [evidence]
    for e in items:
        p = apply_evidence(p, e, alpha)
    return p


def mix(densities, weights):
    """Geometric pooling for either representation; returns (density, log Z or None)."""
    if isinstance(densities[0], GridDensity):
        return grid_geometric_mix(densities, weights)
    return geometric_mean(densities, weights), None


def _inbox(states, network, i):
    return {j: states[j] for j in network.neighbors(i)}


def distributed_mix(states, network, inboxes=None):
    """Mixing phase of distributed SMD: v_i = normalised prod_j p_j^{A_ij}."""
    out = []
    for i in range(network.n):
        inbox = inboxes[i] if inboxes is not None else _inbox(states, network, i)
        nbrs = network.neighbors(i)
        missing = [j for j in nbrs if j not in inbox]
        if missing:
            raise ProtocolError(f"agent {i} is missing messages from {missing}")
        v, _ = mix([inbox[j] for j in nbrs], [network.weights[i, j] for j in nbrs])
        out.append(v)
    return out


def distributed_step(states, network, evidence, alpha, return_mixed=False):
    """Distributed SMD: geometric mixing over full estimates, then local update."""
    _check_alpha(alpha)
    if len(states) != network.n:
        raise LayoutError("one state per agent required")
    mixed = distributed_mix(states, network)
    nxt = [apply_evidence(v, e, alpha) for v, e in zip(mixed, evidence)]
    return (nxt, mixed) if return_mixed else nxt


def marginal_messages(states, network, layout):
    """Message phase: each agent j sends its marginal over X_ij to neighbour i."""
    inboxes = []
    for i in range(network.n):
        inbox = {}
        for j in network.neighbors(i, include_self=False):
            shared = layout.shared(j, i)
            if shared:
                inbox[j] = marginal_of(states[j], shared)
        inboxes.append(inbox)
    return inboxes


def marginal_of(density, keep):
    if isinstance(density, GridDensity):
        return grid_marginalize(density, keep)
    return marginalize(density, keep)


def merge_neighbor(p_self, message):
    if isinstance(p_self, GridDensity):
        return grid_conditional_marginal_product(p_self, message)
    return conditional_marginal_product(p_self, message)


def marginal_mix(states, network, layout, inboxes=None, return_log_z=False):
    """Marginal mixing at every agent; optionally also returns log Z_i."""
    if inboxes is None:
        inboxes = marginal_messages(states, network, layout)
    mixed, log_zs = [], []
    for i in range(network.n):
        p_i = states[i]
        if tuple(p_i.vars) != tuple(layout.agent_subsets[i]) and set(p_i.vars) != set(layout.agent_subsets[i]):
            raise LayoutError(f"agent {i} estimate is not over its variable subset")
        pooled, weights = [], []
        for j in network.neighbors(i):
            if j == i or not layout.shared(i, j):
                pooled.append(p_i)
            else:
                if j not in inboxes[i]:
                    raise ProtocolError(f"agent {i} is missing the message from {j}")
                msg = inboxes[i][j]
                if set(msg.vars) != set(layout.shared(i, j)):
                    raise LayoutError(f"message from {j} to {i} is over {msg.vars}")
                pooled.append(merge_neighbor(p_i, msg))
            weights.append(network.weights[i, j])
        v, log_z = mix(pooled, weights)
        mixed.append(v)
        log_zs.append(log_z)
    return (mixed, log_zs) if return_log_z else mixed


def marginal_step(states, network, layout, evidence, alpha, return_mixed=False):
    """Distributed marginal SMD: exchange marginals, merge, pool, update."""
    _check_alpha(alpha)
    if len(states) != network.n:
        raise LayoutError("one state per agent required")
    mixed = marginal_mix(states, network, layout)
    nxt = [apply_evidence(v, e, alpha) for v, e in zip(mixed, evidence)]
    return (nxt, mixed) if return_mixed else nxt


def gaussian_marginal_round(states, network, layout, evidence, alpha):
    """Gaussian marginal SMD round built on :func:`gaussian_marginal_mix`."""
    inboxes = marginal_messages(states, network, layout)
    out = []
    for i in range(network.n):
        weights = {j: network.weights[i, j] for j in network.neighbors(i)}
        msgs = {j: inboxes[i].get(j, _empty(states[i])) for j in weights if j != i}
        v = gaussian_marginal_mix(states[i], msgs, weights, self_id=i)
        out.append(apply_evidence(v, evidence[i], alpha))
    return out


class _Empty:
    vars = ()


def _empty(_):
    return _Empty()
