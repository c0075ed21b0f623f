"""Synthetic grid-discretised estimation problems with bounded likelihoods.

Each agent carries a handful of binary sensors.  Sensor ``k`` of agent ``i``
fires with probability ``eps + (1 - 2 eps) * sigmoid(sharpness * (c_k . X_i - b_k))``,
so every log-likelihood lies in ``[log eps, 0]`` and the bounded-gradient
constant is ``L = n_sensors * (-log eps)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..density import VariableLayout
from ..engine import observation_rng
from ..errors import LayoutError
from ..estimators import GridEvidence, centralized_step, distributed_step, marginal_step
from ..grid import Axis, GridDensity, grid_marginalize, grid_tv
from ..network import Network


@dataclass(frozen=True, eq=False)
class BernoulliSensors:
    """Bank of binary sensors reading the variables ``vars``."""

    vars: tuple
    directions: np.ndarray   # (k, len(vars))
    offsets: np.ndarray      # (k,)
    sharpness: float
    eps: float

    @property
    def bound(self):
        return len(self.offsets) * -np.log(self.eps)

    def fire_prob(self, points):
        """Firing probabilities at points (..., len(vars)) -> (..., k)."""
        a = self.sharpness * (np.asarray(points) @ self.directions.T - self.offsets)
        return self.eps + (1 - 2 * self.eps) * 0.5 * (1 + np.tanh(0.5 * a))

    def sample(self, truth, rng):
        return (rng.random(len(self.offsets)) < self.fire_prob(truth)).astype(float)

    def log_tables(self, axes):
        """Per-sensor (log pi, log(1 - pi)) on the grid, cached per axes."""
        key = tuple(axes)
        cache = self.__dict__.setdefault("_tables", {})
        if key not in cache:
            pts = np.stack(np.meshgrid(*[a.points for a in axes], indexing="ij"), axis=-1)
            pi = self.fire_prob(pts)
            cache[key] = (np.log(pi), np.log1p(-pi))
        return cache[key]

    def log_field(self, bits, axes):
        log_on, log_off = self.log_tables(axes)
        return log_off.sum(axis=-1) + (log_on - log_off) @ np.asarray(bits, dtype=float)

    def expected_log_field(self, truth, axes):
        pts = np.stack(np.meshgrid(*[a.points for a in axes], indexing="ij"), axis=-1)
        pi = self.fire_prob(pts)
        ps = self.fire_prob(np.asarray(truth))
        return np.sum(ps * np.log(pi) + (1 - ps) * np.log1p(-pi), axis=-1)


class GridProblem:
    """Agents on a network estimating scalar variables discretised on a grid."""

    kinds = ("centralized", "distributed", "marginal")
    name = "grid"

    def __init__(self, layout, network, axes, truth, sensors):
        self.layout = layout
        self.network = network
        self.axes = tuple(axes)
        self.truth = dict(truth)
        self.sensors = list(sensors)
        if [a.var for a in self.axes] != list(layout.variables):
            raise LayoutError("grid axes must follow the layout's variable order")
        for a in self.axes:
            if not np.any(np.isclose(a.points, self.truth[a.var])):
                raise LayoutError(f"truth of {a.var!r} must lie on a grid node")
        self.L = max(s.bound for s in self.sensors)

    @property
    def n_agents(self):
        return self.network.n

    def agent_axes(self, i):
        subset = set(self.layout.agent_subsets[i])
        return tuple(a for a in self.axes if a.var in subset)

    def truth_of(self, variables):
        return np.array([self.truth[v] for v in variables])

    def truth_index(self, axes):
        return tuple(int(np.argmin(np.abs(a.points - self.truth[a.var]))) for a in axes)

    # -- data ------------------------------------------------------------
    def evidence(self, i, t, seed):
        s = self.sensors[i]
        bits = s.sample(self.truth_of(s.vars), observation_rng(seed, i, t))
        axes = tuple(a for a in self.axes if a.var in set(s.vars))
        if tuple(a.var for a in axes) != s.vars:
            raise LayoutError("sensor variables must follow the layout order")
        return GridEvidence(s.vars, s.log_field(bits, axes))

    def expected_loglik(self, i, axes):
        """E_{z ~ q_i*}[log q_i(z | X)] on the grid ``axes`` (broadcast)."""
        from ..grid import expand
        s = self.sensors[i]
        sub = tuple(a for a in axes if a.var in set(s.vars))
        return expand(s.expected_log_field(self.truth_of(s.vars), sub), s.vars, axes)

    def objective(self, p):
        """f[p] = -sum_i E_p E_z log q_i(z | X) for a density over all variables."""
        field = sum(self.expected_loglik(i, p.axes) for i in range(self.n_agents))
        return -p.expectation(field)

    def optimal_objective(self):
        field = sum(self.expected_loglik(i, self.axes) for i in range(self.n_agents))
        return -float(np.max(field))

    def optimal_density(self, axes=None):
        """Point mass on the cell holding the truth (the minimiser of f on the grid)."""
        axes = self.axes if axes is None else tuple(axes)
        log = np.full(tuple(a.n for a in axes), -np.inf)
        log[self.truth_index(axes)] = 0.0
        return GridDensity.from_log_unnormalized(axes, log)[0]

    # -- engine protocol ---------------------------------------------------
    def init(self, kind):
        if kind == "centralized":
            return GridDensity.uniform(self.axes)
        if kind == "distributed":
            return [GridDensity.uniform(self.axes) for _ in range(self.n_agents)]
        if kind == "marginal":
            return [GridDensity.uniform(self.agent_axes(i)) for i in range(self.n_agents)]
        raise ValueError(kind)

    def advance(self, kind, state, t, alpha, seed):
        ev = [self.evidence(i, t, seed) for i in range(self.n_agents)]
        if kind == "centralized":
            return centralized_step(state, ev, alpha)
        if kind == "distributed":
            return distributed_step(state, self.network, ev, alpha)
        return marginal_step(state, self.network, self.layout, ev, alpha)

    def metrics(self, kind, state):
        rows = []
        for i in range(self.n_agents):
            own = self.layout.agent_subsets[i]
            p = state if kind == "centralized" else state[i]
            p_own = grid_marginalize(p, own) if set(p.vars) != set(own) else p
            err = float(np.linalg.norm(p_own.mean() - self.truth_of(p_own.vars)))
            kl = -float(np.log(max(p_own.probabilities[self.truth_index(p_own.axes)], 1e-300)))
            tv = 0.0
            if kind != "centralized":
                for j in self.network.neighbors(i, include_self=False):
                    shared = self.layout.shared(i, j)
                    if kind == "distributed":
                        shared = tuple(self.layout.variables)
                    if shared:
                        tv = max(tv, grid_tv(grid_marginalize(state[i], shared),
                                             grid_marginalize(state[j], shared)))
            rows.append((err, tv, kl))
        return rows

    # -- construction ------------------------------------------------------
    def identifiability_gap(self):
        """f-gap between the truth cell and the best competing cell (0 if not unique)."""
        field = sum(self.expected_loglik(i, self.axes) for i in range(self.n_agents))
        best = field[self.truth_index(self.axes)]
        rest = np.delete(field.ravel(), np.ravel_multi_index(self.truth_index(self.axes), field.shape))
        return float(max(best - rest.max(), 0.0))

    @classmethod
    def random(cls, layout, network, n_points=21, lo=-2.0, hi=2.0, sensors_per_agent=4,
               eps=0.05, sharpness=3.0, seed=0, min_gap=0.0, max_tries=200):
        """Random sensors; truth drawn on interior grid nodes.

        Sensor banks are redrawn until the truth beats every other cell of the
        expected log-likelihood by ``min_gap`` (so the optimum is unique).
        """
        rng = np.random.default_rng(seed)
        axes = [Axis(v, lo, hi, n_points) for v in layout.variables]
        truth = {a.var: float(a.points[rng.integers(n_points // 4, n_points - n_points // 4)])
                 for a in axes}
        for _ in range(max_tries):
            sensors = []
            for i in layout.agents:
                vs = layout.agent_subsets[i]
                dirs = rng.normal(size=(sensors_per_agent, len(vs)))
                dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
                offs = dirs @ np.array([truth[v] for v in vs]) + rng.uniform(-1.0, 1.0, sensors_per_agent)
                sensors.append(BernoulliSensors(vs, dirs, offs, sharpness, eps))
            problem = cls(layout, network, axes, truth, sensors)
            if min_gap <= 0 or problem.identifiability_gap() >= min_gap:
                return problem
        raise LayoutError(f"no sensor draw reached identifiability gap {min_gap}")


def two_agent_problem(seed=0, n_points=11, sensors_per_agent=8, eps=0.02, sharpness=8.0, min_gap=0.5):
    """Two agents, two scalar variables: agent 0 holds {x0, x1}, agent 1 holds {x1}."""
    layout = VariableLayout({"x0": 1, "x1": 1}, {0: ("x0", "x1"), 1: ("x1",)})
    network = Network(np.array([[0.5, 0.5], [0.5, 0.5]]))
    return GridProblem.random(layout, network, n_points=n_points, sensors_per_agent=sensors_per_agent,
                              eps=eps, sharpness=sharpness, seed=seed, min_gap=min_gap)
