"""Randomized numerical checks of the estimator propositions.

Every suite returns a :class:`SuiteReport` listing each checked proposition
with its instance count and worst violation.  A violation is the amount by
which an inequality is broken (0 when it holds), so a suite passes when
every hard proposition has ``max_violation <= tolerance``.
"""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .density import (GaussianDensity, VariableLayout, condition, conditional_marginal_product,
                      geometric_mean, kl_divergence, marginalize, tv_distance)
from .estimators import (AdaptiveOracle, RobbinsMonro, centralized_step, distributed_step, marginal_mix,
                         marginal_step)
from .gaussian import LinearGaussianModel, linear_gaussian_posterior
from .grid import (Axis, GridDensity, geometric_average, grid_bayes_update,
                   grid_conditional_marginal_product, grid_geometric_mix, grid_kl, grid_marginalize,
                   grid_tv)
from .network import Network, contraction_rate, erdos_renyi_edges, make_topology, sinkhorn_normalize
from .scenarios.grid_problem import GridProblem, two_agent_problem


@dataclass
class PropositionResult:
    name: str
    instances: int = 0
    max_violation: float = 0.0
    tolerance: float = 0.0
    hard: bool = True
    detail: dict = field(default_factory=dict)

    def add(self, violation):
        self.instances += 1
        v = float(violation)
        if not np.isfinite(v):
            v = float("inf")
        self.max_violation = max(self.max_violation, v)

    @property
    def passed(self):
        return self.max_violation <= self.tolerance


@dataclass
class SuiteReport:
    suite: str
    propositions: list
    seconds: float = 0.0

    @property
    def passed(self):
        return all(p.passed for p in self.propositions if p.hard)

    def get(self, name):
        for p in self.propositions:
            if p.name == name:
                return p
        raise KeyError(name)

    def to_dict(self):
        return {
            "suite": self.suite,
            "passed": self.passed,
            "seconds": round(self.seconds, 3),
            "propositions": [dict(asdict(p), passed=p.passed) for p in self.propositions],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


# --- random instances ---------------------------------------------------------

def random_gaussian(rng, variables, spread=1.0, cond=10.0):
    """Random scalar-variable Gaussian with moderate conditioning."""
    k = len(variables)
    q, _ = np.linalg.qr(rng.normal(size=(k, k)))
    eig = np.exp(rng.uniform(0.0, np.log(cond), size=k)) / spread ** 2
    omega = q @ np.diag(eig) @ q.T
    mean = rng.normal(scale=spread, size=k)
    return GaussianDensity(variables, (1,) * k, 0.5 * (omega + omega.T), omega @ mean)


def covering_axes(densities, variables, n, width=9.0):
    """Axes spanning +-``width`` standard deviations of every density."""
    axes = []
    for v in variables:
        lo, hi = np.inf, -np.inf
        for d in densities:
            if v not in d.vars:
                continue
            m = marginalize(d, (v,))
            sd = float(np.sqrt(m.covariance[0, 0]))
            lo, hi = min(lo, m.mean[0] - width * sd), max(hi, m.mean[0] + width * sd)
        axes.append(Axis(v, lo, hi, n))
    return tuple(axes)


def random_grid_density(rng, axes, roughness=1.0):
    """Strictly positive random density (smooth bump plus cellwise noise)."""
    shape = tuple(a.n for a in axes)
    log = roughness * rng.normal(size=shape)
    for k, a in enumerate(axes):
        c = rng.uniform(a.lo, a.hi)
        s = rng.uniform(0.3, 1.0) * (a.hi - a.lo)
        pts = a.points.reshape([-1 if m == k else 1 for m in range(len(axes))])
        log = log - 0.5 * ((pts - c) / s) ** 2
    return GridDensity.from_log_unnormalized(axes, log)[0]


def random_network(rng, n):
    if n <= 2:
        return Network(np.full((n, n), 1.0 / n))
    edges = erdos_renyi_edges(n, 0.5, rng)
    return Network.from_edges(n, edges)


# --- density algebra: closed forms against the grid oracle --------------------

ORACLE_OPS = ("posterior", "marginal", "conditional", "geometric-mean", "conditional-marginal")


def _oracle_case(rng, op, dims):
    """KL between the grid oracle and the discretised closed form for one case."""
    names = ("a", "b")[:dims]
    n1 = 801 if dims == 1 else 181
    if op == "posterior":
        prior = random_gaussian(rng, names)
        k = int(rng.integers(1, 3))
        H = rng.normal(size=(k, dims))
        V = np.diag(rng.uniform(0.5, 4.0, size=k))
        model = LinearGaussianModel(names, (1,) * dims, H, V)
        z = H @ prior.mean + rng.normal(size=k)
        alpha = float(rng.uniform(0.1, 1.0))
        post = linear_gaussian_posterior(prior, model, z, alpha)
        axes = covering_axes([prior, post], names, n1)
        g_prior = GridDensity.from_gaussian(prior, axes)
        pts = g_prior.points()
        oracle = grid_bayes_update(g_prior, model.loglik(pts, z), alpha)
        return grid_kl(oracle, GridDensity.from_gaussian(post, axes))
    if op == "geometric-mean":
        m = int(rng.integers(2, 5))
        ds = [random_gaussian(rng, names) for _ in range(m)]
        w = rng.dirichlet(np.ones(m))
        closed = geometric_mean(ds, w)
        axes = covering_axes(ds + [closed], names, n1)
        oracle, _ = grid_geometric_mix([GridDensity.from_gaussian(d, axes) for d in ds], w)
        return grid_kl(oracle, GridDensity.from_gaussian(closed, axes))
    # remaining operations act on a 2-variable joint
    joint = random_gaussian(rng, ("a", "b"))
    n2 = 241
    if op == "marginal":
        closed = marginalize(joint, ("b",))
        axes = covering_axes([joint], ("a", "b"), n2)
        oracle = grid_marginalize(GridDensity.from_gaussian(joint, axes), ("b",))
        return grid_kl(oracle, GridDensity.from_gaussian(closed, axes[1:]))
    if op == "conditional":
        axes = covering_axes([joint], ("a", "b"), n2)
        k = int(rng.integers(n2 // 4, 3 * n2 // 4))
        xb = axes[1].points[k]
        closed = condition(joint, ("b",)).at([xb])
        a_axis = covering_axes([joint, closed], ("a",), n2)[0]
        pts = np.stack(np.meshgrid(a_axis.points, [xb], indexing="ij"), axis=-1)[:, 0, :]
        oracle = GridDensity.from_log_unnormalized((a_axis,), joint.logpdf(pts))[0]
        return grid_kl(oracle, GridDensity.from_gaussian(closed, (a_axis,)))
    if op == "conditional-marginal":
        nb = random_gaussian(rng, ("b",))
        closed = conditional_marginal_product(joint, nb)
        axes = covering_axes([joint, nb, closed], ("a", "b"), n2)
        oracle = grid_conditional_marginal_product(GridDensity.from_gaussian(joint, axes),
                                                   GridDensity.from_gaussian(nb, axes[1:]))
        return grid_kl(oracle, GridDensity.from_gaussian(closed, axes))
    raise ValueError(op)


def oracle_equivalence(n_cases=200, seed=0, tol=1e-5):
    """Closed-form Gaussian operations against grid computations."""
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    results = {op: PropositionResult(f"oracle:{op}", tolerance=tol) for op in ORACLE_OPS}
    for c in range(n_cases):
        op = ORACLE_OPS[c % len(ORACLE_OPS)]
        dims = 1 + int(rng.integers(0, 2)) if op in ("posterior", "geometric-mean") else 2
        results[op].add(_oracle_case(rng, op, dims))
    return SuiteReport("oracle-equivalence", list(results.values()), time.perf_counter() - t0)


def density_algebra(n_cases=100, seed=0, tol=1e-10):
    """Oracle comparisons plus exact algebraic identities of the Gaussian closed forms."""
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    oracle = oracle_equivalence(n_cases, seed)
    recon = PropositionResult("conditional-times-marginal-reconstructs-joint", tolerance=tol)
    pool = PropositionResult("geometric-mean-of-identical-is-identity", tolerance=tol)
    sink = PropositionResult("sinkhorn-doubly-stochastic", tolerance=1e-9)
    for _ in range(n_cases):
        k = int(rng.integers(2, 5))
        names = tuple(f"v{m}" for m in range(k))
        p = random_gaussian(rng, names)
        given = names[int(rng.integers(1, k)):]
        rebuilt = condition(p, given).times(marginalize(p, given)).reorder(names)
        scale = max(1.0, float(np.abs(p.info_matrix).max()))
        recon.add(max(np.abs(rebuilt.info_matrix - p.info_matrix).max(),
                      np.abs(rebuilt.info_vector - p.info_vector).max()) / scale)
        w = rng.dirichlet(np.ones(3))
        same = geometric_mean([p, p, p], w)
        pool.add(np.abs(same.info_matrix - p.info_matrix).max() / scale)
        n = int(rng.integers(2, 7))
        adj = np.eye(n)
        for i, j in erdos_renyi_edges(n, 0.6, rng):
            adj[i, j] = adj[j, i] = rng.uniform(0.5, 2.0)
        a = sinkhorn_normalize(adj)
        sink.add(max(np.abs(a.sum(0) - 1).max(), np.abs(a.sum(1) - 1).max()))
    return SuiteReport("density-algebra", oracle.propositions + [recon, pool, sink],
                       time.perf_counter() - t0)


# --- mixing ---------------------------------------------------------------------

def mixing_propositions(n_instances=500, seed=0, tol=1e-9, strict=1e-6, tv_gate=1e-3):
    """Geometric mixing never increases the KL sum to any fixed reference."""
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    dec = PropositionResult("mixing-kl-nonincrease", tolerance=tol)
    strict_dec = PropositionResult("mixing-kl-strict-decrease", tolerance=0.0)
    invariant = PropositionResult("mixing-preserves-geometric-average", tolerance=1e-9)
    for _ in range(n_instances):
        n = int(rng.integers(2, 6))
        dims = int(rng.integers(1, 3))
        axes = tuple(Axis(v, -3.0, 3.0, 25 if dims == 1 else 13) for v in ("a", "b")[:dims])
        net = random_network(rng, n)
        ps = [random_grid_density(rng, axes, roughness=float(rng.uniform(0.0, 1.0))) for _ in range(n)]
        if rng.random() < 0.1:
            ps = [ps[0]] * n
        ref = random_grid_density(rng, axes)
        vs = [grid_geometric_mix([ps[j] for j in range(n)], net.weights[i])[0] for i in range(n)]
        before = sum(grid_kl(ref, p) for p in ps)
        after = sum(grid_kl(ref, v) for v in vs)
        dec.add(max(after - before, 0.0))
        gap = max(grid_tv(ps[i], ps[j]) for i in range(n) for j in range(i + 1, n))
        if gap > tv_gate:
            strict_dec.add(max(strict - (before - after), 0.0))
        invariant.add(grid_tv(geometric_average(ps), geometric_average(vs)))
    return SuiteReport("mixing-propositions", [dec, strict_dec, invariant], time.perf_counter() - t0)


def _shared_layout():
    """Two agents: agent 0 holds (a, b), agent 1 holds (b, c)."""
    layout = VariableLayout({"a": 1, "b": 1, "c": 1}, {0: ("a", "b"), 1: ("b", "c")})
    return layout, Network(np.full((2, 2), 0.5))


def manifold_z(n_instances=100, seed=0, coherent_tol=1e-9, drop=1e-6, min_tv=1e-2):
    """Sum of mixing log-normalisers: zero on coherent marginals, negative off them."""
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    layout, net = _shared_layout()
    coh = PropositionResult("coherent-log-z-sum-zero", tolerance=coherent_tol)
    pert = PropositionResult("perturbed-log-z-sum-negative", tolerance=0.0)
    axes = tuple(Axis(v, -3.0, 3.0, 15) for v in ("a", "b", "c"))
    for _ in range(n_instances):
        joint = random_grid_density(rng, axes, roughness=float(rng.uniform(0.2, 1.0)))
        states = [grid_marginalize(joint, layout.agent_subsets[i]) for i in range(2)]
        _, log_z = marginal_mix(states, net, layout, return_log_z=True)
        coh.add(abs(sum(log_z)))
        # perturb agent 1's shared marginal by tilting along b
        ax_b = axes[1]
        while True:
            tilt = rng.normal(scale=2.0) * ax_b.points + rng.normal(scale=0.5, size=ax_b.n)
            log = states[1].log_density + tilt[:, None]
            moved = GridDensity.from_log_unnormalized(states[1].axes, log)[0]
            if grid_tv(moved, states[1]) >= min_tv:
                break
        _, log_z = marginal_mix([states[0], moved], net, layout, return_log_z=True)
        pert.add(max(sum(log_z) + drop, 0.0))
    return SuiteReport("manifold-Z", [coh, pert], time.perf_counter() - t0)


def _iterate_problem(seed, n_agents=3, n_points=11):
    net = Network.from_edges(n_agents, make_topology("ring", n_agents))
    layout = VariableLayout.full({"a": 1, "b": 1}, range(n_agents))
    return GridProblem.random(layout, net, n_points=n_points, sensors_per_agent=3, seed=seed)


def tv_iterate_gap(n_runs=50, T=200, seed=0, schedule=None):
    """Per-round TV movement of updates and of the network geometric average."""
    schedule = schedule or RobbinsMonro()
    t0 = time.perf_counter()
    upd = PropositionResult("update-gap-le-alpha-L-over-2", tolerance=0.0)
    drift = PropositionResult("geometric-average-drift-le-alpha-L-over-2", tolerance=0.0)
    for r in range(n_runs):
        run_seed = seed * 100_003 + r
        prob = _iterate_problem(run_seed)
        # each agent's own likelihood bound; the average field obeys the largest
        bounds = [s.bound for s in prob.sensors]
        states = prob.init("distributed")
        pbar = geometric_average(states)
        for t in range(T):
            alpha = schedule(t, states)
            ev = [prob.evidence(i, t, run_seed) for i in range(prob.n_agents)]
            nxt, mixed = distributed_step(states, prob.network, ev, alpha, return_mixed=True)
            for i in range(prob.n_agents):
                upd.add(max(grid_tv(mixed[i], nxt[i]) - alpha * bounds[i] / 2, 0.0))
            nbar = geometric_average(nxt)
            drift.add(max(grid_tv(pbar, nbar) - alpha * max(bounds) / 2, 0.0))
            states, pbar = nxt, nbar
    return SuiteReport("tv-iterate-gap", [upd, drift], time.perf_counter() - t0)


def _centered_log_deviation(states):
    """Agent-by-cell log deviations from the agent mean, each row centred over cells."""
    logs = np.stack([s.log_density.ravel() for s in states])
    logs = logs - logs.mean(axis=1, keepdims=True)
    return logs - logs.mean(axis=0, keepdims=True)


def contraction(topologies=("ring", "line", "complete"), n_agents=5, runs=5, T=100, seed=0, tol=1e-6):
    """Per-round mixing contraction measured against ``sigma(A)``.

    Reports the TV form (sum of TV to the geometric average) and the
    log-density form (Frobenius norm of centred log deviations); only the
    latter is implied by ``sigma(A)`` in general.
    """
    t0 = time.perf_counter()
    props = []
    schedule = RobbinsMonro()
    for topo in topologies:
        net = Network.from_edges(n_agents, make_topology(topo, n_agents))
        sigma = contraction_rate(net)
        tv_p = PropositionResult(f"tv-contraction:{topo}", tolerance=tol, detail={"sigma": sigma})
        log_p = PropositionResult(f"log-contraction:{topo}", tolerance=tol, detail={"sigma": sigma})
        worst = 0.0
        for r in range(runs):
            run_seed = seed * 1009 + r
            layout = VariableLayout.full({"a": 1, "b": 1}, range(n_agents))
            prob = GridProblem.random(layout, net, n_points=15, seed=run_seed)
            states = prob.init("distributed")
            for t in range(T):
                ev = [prob.evidence(i, t, run_seed) for i in range(n_agents)]
                nxt, mixed = distributed_step(states, net, ev, schedule(t), return_mixed=True)
                pbar = geometric_average(states)
                before = sum(grid_tv(p, pbar) for p in states)
                if before > 1e-12:
                    after = sum(grid_tv(v, pbar) for v in mixed)
                    worst = max(worst, after / before)
                    tv_p.add(max(after / before - sigma, 0.0))
                    d0 = np.linalg.norm(_centered_log_deviation(states))
                    d1 = np.linalg.norm(_centered_log_deviation(mixed))
                    log_p.add(max(d1 / d0 - sigma, 0.0))
                states = nxt
        tv_p.detail["worst_factor"] = worst
        props += [tv_p, log_p]
    return SuiteReport("contraction", props, time.perf_counter() - t0)


def pinsker(n_instances=300, seed=0):
    """Pinsker and Hoelder inequalities on random Gaussian and grid pairs."""
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    pin_g = PropositionResult("pinsker-gaussian", tolerance=1e-4)
    pin_grid = PropositionResult("pinsker-grid", tolerance=1e-12)
    holder = PropositionResult("tv-hoelder-grid", tolerance=1e-12)
    axes = (Axis("a", -3.0, 3.0, 41), Axis("b", -3.0, 3.0, 41))
    for k in range(n_instances):
        if k % 3 == 0:
            names = ("a", "b")[: 1 + int(rng.integers(0, 2))]
            p, g = random_gaussian(rng, names), random_gaussian(rng, names)
            # the quadrature tolerance on TV enters squared
            pin_g.add(max(2 * tv_distance(p, g) ** 2 - kl_divergence(p, g), 0.0))
        p, g = random_grid_density(rng, axes), random_grid_density(rng, axes)
        tv = grid_tv(p, g)
        pin_grid.add(max(2 * tv ** 2 - grid_kl(p, g), 0.0))
        psi = rng.normal(size=p.shape)
        lhs = abs(p.expectation(psi) - g.expectation(psi))
        holder.add(max(lhs - 2 * np.abs(psi).max() * tv, 0.0))
    return SuiteReport("pinsker", [pin_g, pin_grid, holder], time.perf_counter() - t0)


def rate_problem(seed):
    """Single-agent two-variable grid problem for the centralized rate check."""
    layout = VariableLayout({"a": 1, "b": 1}, {0: ("a", "b")})
    net = Network(np.ones((1, 1)))
    return GridProblem.random(layout, net, n_points=11, sensors_per_agent=6, eps=0.1,
                              sharpness=3.0, seed=seed, min_gap=0.05)


def rate_bound(n_seeds=20, checkpoints=(10, 100, 1000), seed=0):
    """Averaged-iterate objective gap against ``sqrt(8 L^2 KL(p*, p0) / t)``."""
    t0 = time.perf_counter()
    res = PropositionResult("centralized-rate", tolerance=0.0)
    ratios = []
    T = max(checkpoints)
    for s in range(n_seeds):
        prob = rate_problem(seed * 7919 + s)
        L = sum(sn.bound for sn in prob.sensors)
        f_star = prob.optimal_objective()
        p0 = prob.init("centralized")
        kl0 = grid_kl(prob.optimal_density(), p0)
        sched = AdaptiveOracle(L, f_star, prob.objective)
        p, acc = p0, 0.0
        for t in range(1, T + 1):
            # the averaged iterate covers p_0 .. p_{t-1}
            acc += prob.objective(p)
            if t in checkpoints:
                gap = acc / t - f_star
                bound = np.sqrt(8 * L ** 2 * kl0 / t)
                ratios.append(gap / bound)
                res.add(max(gap - bound, 0.0))
            ev = [prob.evidence(i, t, s) for i in range(prob.n_agents)]
            p = centralized_step(p, ev, sched(t, p))
    res.detail["max_gap_over_bound"] = float(max(ratios))
    return SuiteReport("rate-bound", [res], time.perf_counter() - t0)


def marginal_convergence(n_seeds=50, T=2000, seed=0, schedule=None):
    """Median over seeds of ``sum_i KL(p*_i, v_{i,T})`` on the two-agent grid problem."""
    schedule = schedule or RobbinsMonro()
    t0 = time.perf_counter()
    finals = []
    for s in range(n_seeds):
        prob = two_agent_problem(seed=seed * 1000 + s)
        states = prob.init("marginal")
        mixed = states
        for t in range(T):
            ev = [prob.evidence(i, t, s) for i in range(prob.n_agents)]
            states, mixed = marginal_step(states, prob.network, prob.layout, ev, schedule(t),
                                          return_mixed=True)
        finals.append(sum(grid_kl(prob.optimal_density(v.axes), v) for v in mixed))
    res = PropositionResult("marginal-kl-median", tolerance=1e-2, hard=True,
                            detail={"median": float(np.median(finals))})
    res.instances = n_seeds
    res.max_violation = float(np.median(finals))
    return SuiteReport("marginal-convergence", [res], time.perf_counter() - t0)


SUITES = {
    "density-algebra": density_algebra,
    "oracle-equivalence": oracle_equivalence,
    "mixing-propositions": mixing_propositions,
    "manifold-Z": manifold_z,
    "tv-iterate-gap": tv_iterate_gap,
    "contraction": contraction,
    "pinsker": pinsker,
    "rate-bound": rate_bound,
    "marginal-convergence": marginal_convergence,
}


def run_suite(name, **kwargs):
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    return SUITES[name](**kwargs)
