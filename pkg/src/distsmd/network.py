"""Communication graphs, doubly stochastic weights and contraction rates."""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import AssignmentError, ConnectivityError, ConvergenceError, LayoutError

DS_TOL = 1e-10


def _is_connected(adjacency):
    adjacency = np.asarray(adjacency)
    if adjacency.shape[0] <= 1:
        return True
    n_comp, _ = connected_components(adjacency != 0, directed=False)
    return n_comp == 1


def sinkhorn_normalize(matrix, tol=DS_TOL, max_iter=10_000):
    """Scale a symmetric nonnegative matrix to a symmetric doubly stochastic one.

    Classic alternating scaling ``diag(r) M diag(c)``; for symmetric ``M`` the
    limit is the unique symmetric scaling ``D M D``.  Iterates until every row
    and column sum is within ``tol`` of one.
    """
    m = np.array(matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise LayoutError("matrix must be square")
    if np.any(m < 0) or not np.allclose(m, m.T, atol=1e-12):
        raise LayoutError("matrix must be symmetric and nonnegative")
    if np.any(np.diag(m) <= 0):
        raise LayoutError("diagonal entries must be strictly positive")
    if not _is_connected(m):
        raise ConnectivityError("support graph is not connected")

    def scaled(r, c):
        a = r[:, None] * m * c[None, :]
        return 0.5 * (a + a.T)

    def residual(a):
        return max(np.max(np.abs(a.sum(axis=1) - 1)), np.max(np.abs(a.sum(axis=0) - 1)))

    c = np.ones(len(m))
    for _ in range(max_iter):
        r = 1.0 / (m @ c)
        c = 1.0 / (m.T @ r)
        a = scaled(r, c)
        res = residual(a)
        if res < tol:
            return a
    raise ConvergenceError(f"Sinkhorn did not converge in {max_iter} sweeps", residual=res)


@dataclass(frozen=True, eq=False)
class Network:
    """Undirected agent graph with symmetric doubly stochastic weights ``A``."""

    weights: np.ndarray

    def __post_init__(self):
        a = np.array(self.weights, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise LayoutError("weights must be square")
        if np.any(a < 0):
            raise LayoutError("weights must be nonnegative")
        if np.max(np.abs(a - a.T)) > DS_TOL:
            raise LayoutError("weights must be symmetric")
        if max(np.max(np.abs(a.sum(axis=0) - 1)), np.max(np.abs(a.sum(axis=1) - 1))) > DS_TOL:
            raise LayoutError("weights must be doubly stochastic")
        if np.any(np.diag(a) <= 0):
            raise LayoutError("diagonal weights must be positive")
        if not _is_connected(a):
            raise ConnectivityError("network is not connected")
        a.setflags(write=False)
        object.__setattr__(self, "weights", a)

    @property
    def n(self):
        return self.weights.shape[0]

    @property
    def edges(self):
        """Undirected edges i < j with positive weight (self-loops implicit)."""
        a = self.weights
        return tuple((i, j) for i, j in combinations(range(self.n), 2) if a[i, j] > 0)

    def neighbors(self, i, include_self=True):
        """Closed (default) or open neighbourhood of agent ``i``, ascending."""
        nb = np.flatnonzero(self.weights[i] > 0)
        return tuple(int(j) for j in nb if include_self or j != i)

    @classmethod
    def from_edges(cls, n, edges, weighting="sinkhorn"):
        adjacency = adjacency_from_edges(n, edges)
        if weighting == "sinkhorn":
            return cls(sinkhorn_normalize(adjacency + np.eye(n)))
        if weighting == "metropolis":
            return cls(metropolis_weights(adjacency))
        raise LayoutError(f"unknown weighting {weighting!r}")

    def restricted(self, agents):
        """Weights among ``agents`` with leftover row mass moved to the diagonal."""
        agents = sorted(agents)
        sub = self.weights[np.ix_(agents, agents)].copy()
        off = sub - np.diag(np.diag(sub))
        np.fill_diagonal(sub, 1.0 - off.sum(axis=1))
        return sub


def adjacency_from_edges(n, edges):
    adj = np.zeros((n, n))
    for i, j in edges:
        if i == j or not (0 <= i < n and 0 <= j < n):
            raise LayoutError(f"invalid edge {(i, j)}")
        adj[i, j] = adj[j, i] = 1.0
    return adj


def metropolis_weights(adjacency):
    adjacency = np.asarray(adjacency, dtype=float)
    deg = adjacency.sum(axis=1)
    n = len(deg)
    a = np.zeros((n, n))
    for i, j in zip(*np.nonzero(adjacency)):
        a[i, j] = 1.0 / (1.0 + max(deg[i], deg[j]))
    np.fill_diagonal(a, 1.0 - a.sum(axis=1))
    return a


def _second_singular_value(matrix):
    s = np.linalg.svd(matrix, compute_uv=False)
    return float(s[1]) if len(s) > 1 else 0.0


def contraction_rate(network, restricted_to=None):
    """Second largest singular value of the (restricted) weight matrix."""
    if restricted_to is None:
        a = network.weights
    else:
        agents = sorted(set(restricted_to))
        if not agents:
            raise LayoutError("empty agent restriction")
        if not _is_connected(network.weights[np.ix_(agents, agents)]):
            raise ConnectivityError(f"agents {agents} induce a disconnected subgraph")
        a = network.restricted(agents)
    sigma = _second_singular_value(a)
    return max(sigma, 0.0) if sigma > 1e-14 else 0.0


@dataclass(frozen=True)
class VariableSubgraphIndex:
    """For each variable, the agents estimating it and their induced edges."""

    agents: dict
    edges: dict


def validate_marginal_consensus(layout, network):
    agent_ids = list(layout.agents)
    if sorted(agent_ids) != list(range(network.n)):
        raise LayoutError("layout agents must be 0..n-1 matching the network")
    agents_of, edges_of = {}, {}
    for v in layout.variables:
        members = tuple(i for i in range(network.n) if v in layout.agent_subsets[i])
        sub = network.weights[np.ix_(members, members)]
        if not _is_connected(sub):
            raise AssignmentError(
                f"agents {members} estimating variable {v!r} induce a disconnected subgraph",
                variable=v)
        agents_of[v] = members
        edges_of[v] = tuple((i, j) for i, j in combinations(members, 2)
                            if network.weights[i, j] > 0)
    return VariableSubgraphIndex(agents_of, edges_of)


# --- topology generators -------------------------------------------------

def line_edges(n):
    return [(i, i + 1) for i in range(n - 1)]


def ring_edges(n):
    return line_edges(n) + ([(n - 1, 0)] if n > 2 else [])


def star_edges(n):
    return [(0, i) for i in range(1, n)]


def complete_edges(n):
    return list(combinations(range(n), 2))


def erdos_renyi_edges(n, p, rng, max_tries=1000):
    for _ in range(max_tries):
        edges = [e for e in combinations(range(n), 2) if rng.random() < p]
        if _is_connected(adjacency_from_edges(n, edges) + np.eye(n)):
            return edges
    raise ConnectivityError(f"no connected G({n}, {p}) sample in {max_tries} tries")


def interpolated_edges(n, n_edges, seed=0):
    """Line graph plus ``n_edges - (n - 1)`` extra edges added in seeded order."""
    base = line_edges(n)
    if not n - 1 <= n_edges <= n * (n - 1) // 2:
        raise LayoutError(f"{n_edges} edges impossible on a connected {n}-node graph")
    extra = [e for e in combinations(range(n), 2) if e not in set(base)]
    order = np.random.default_rng(seed).permutation(len(extra))
    return base + [extra[k] for k in order[: n_edges - (n - 1)]]


FIG3_EDGE_COUNTS = (7, 11, 15, 19, 23, 27)


def make_topology(spec, n=None, seed=0):
    """Edges for a topology spec such as ``"ring"``, ``"edges:15"``, ``"er:0.4"``."""
    kind, _, arg = str(spec).partition(":")
    if n is None:
        raise LayoutError("agent count required")
    if kind == "line":
        return line_edges(n)
    if kind == "ring":
        return ring_edges(n)
    if kind == "star":
        return star_edges(n)
    if kind == "complete":
        return complete_edges(n)
    if kind == "edges":
        return interpolated_edges(n, int(arg), seed)
    if kind == "er":
        return erdos_renyi_edges(n, float(arg), np.random.default_rng(seed))
    raise LayoutError(f"unknown topology {spec!r}")
