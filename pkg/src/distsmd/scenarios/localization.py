"""Relative localization: agents estimate planar positions from relative measurements.

Agent ``i`` observes ``z_ij ~ N(x_i - x_j, (b I)^{-1})`` for each neighbour
``j``; ``b`` is the measurement information (inverse variance).  Agent 0 is
an anchor at the origin, encoded as a prior with information ``1e8 I`` held
by every estimator that carries ``x_0``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..bp import CircularBPConfig, PairwiseFactor, bp_round, circular_bp_round
from ..density import GaussianDensity, VariableLayout, marginalize, tv_distance
from ..engine import observation_rng
from ..errors import LayoutError
from ..estimators import LinearEvidence, centralized_step, distributed_mix, marginal_mix
from ..gaussian import LinearGaussianModel
from ..network import Network, make_topology, validate_marginal_consensus

ANCHOR_INFO = 1e8
PRIOR_INFO = 1e-2
DIM = 2


def var(i):
    return f"x{i}"


def draw_positions(n, rng, box=10.0, min_separation=1.0, max_tries=10_000):
    """Anchor at the origin, the rest uniform in ``[-box/2, box/2]^2`` with a minimum spacing."""
    pts = [np.zeros(DIM)]
    tries = 0
    while len(pts) < n:
        tries += 1
        if tries > max_tries:
            raise LayoutError("could not place agents with the requested separation")
        cand = rng.uniform(-box / 2, box / 2, size=DIM)
        if min(np.linalg.norm(cand - p) for p in pts) >= min_separation:
            pts.append(cand)
    return np.array(pts)


def relative_model(i, j, b, over):
    """Linear model for ``z_ij`` with ``H`` acting on the stacked ``over`` variables."""
    H = np.zeros((DIM, DIM * len(over)))
    pos = {v: k for k, v in enumerate(over)}
    H[:, DIM * pos[var(i)]:DIM * pos[var(i)] + DIM] = np.eye(DIM)
    H[:, DIM * pos[var(j)]:DIM * pos[var(j)] + DIM] = -np.eye(DIM)
    return LinearGaussianModel(tuple(over), (DIM,) * len(over), H, b * np.eye(DIM))


def localization_error(estimates, truth):
    """Per-agent ``||mu_i(x_i) - x_i||`` and their mean.

    ``estimates`` maps (or lists) agent -> Gaussian carrying ``x_i``.
    """
    items = estimates.items() if isinstance(estimates, dict) else enumerate(estimates)
    errs = []
    for i, p in items:
        if var(i) not in p.vars:
            raise LayoutError(f"estimate of agent {i} does not carry {var(i)}")
        mu = p.mean[p.index([var(i)])]
        errs.append(float(np.linalg.norm(mu - truth[i])))
    errs = np.array(errs)
    return errs, float(errs.mean())


@dataclass
class LocalizationState:
    """Estimator state plus the centralized reference posterior on the same data."""

    estimates: object
    reference: GaussianDensity
    messages: dict = field(default_factory=dict)


class LocalizationScenario:
    kinds = ("centralized", "distributed", "marginal", "bp", "circular-bp")
    name = "localization"

    def __init__(self, positions, network, b, edge_fraction=1.0, bp_alpha=0.8,
                 prior_info=PRIOR_INFO, anchor_info=ANCHOR_INFO, exact_tv=False, bp_self="belief"):
        self.positions = np.asarray(positions, dtype=float)
        self.network = network
        self.n = network.n
        if self.positions.shape != (self.n, DIM):
            raise LayoutError("one planar position per agent required")
        if not np.allclose(self.positions[0], 0.0):
            raise LayoutError("the anchor (agent 0) must sit at the origin")
        if b <= 0 or not 0 < edge_fraction <= 1:
            raise ValueError("need b > 0 and edge_fraction in (0, 1]")
        self.b = float(b)
        self.edge_fraction = float(edge_fraction)
        self.bp = CircularBPConfig(bp_alpha)
        self.prior_info = prior_info
        self.anchor_info = anchor_info
        self.exact_tv = exact_tv
        if bp_self not in ("belief", "prior"):
            raise ValueError("bp_self must be 'belief' or 'prior'")
        self.bp_self = bp_self
        self.variables = {var(i): DIM for i in range(self.n)}
        self.all_vars = tuple(self.variables)
        self.layout = VariableLayout(
            self.variables, {i: tuple(var(j) for j in network.neighbors(i)) for i in range(self.n)})
        self.subgraphs = validate_marginal_consensus(self.layout, network)
        self.nbrs = {i: network.neighbors(i, include_self=False) for i in range(self.n)}
        # models per agent: full-state (distributed/centralized) and marginal
        self.models_full = {i: [relative_model(i, j, self.b, self.all_vars) for j in self.nbrs[i]]
                            for i in range(self.n)}
        self.models_marg = {i: [relative_model(i, j, self.b, self.layout.agent_subsets[i])
                                for j in self.nbrs[i]] for i in range(self.n)}
        self._stacked = {}

    # -- models -----------------------------------------------------------
    def stacked_model(self, i, mode="full"):
        """All of agent ``i``'s measurements as one model (``H^(d)`` or ``H^(m)``)."""
        models = self.models_full[i] if mode == "full" else self.models_marg[i]
        H = np.vstack([m.H for m in models])
        V = self.b * np.eye(H.shape[0])
        return LinearGaussianModel(models[0].vars, models[0].dims, H, V)

    def measurements(self, i, t, seed):
        """Agent ``i``'s round-``t`` measurements as {neighbour: z_ij}."""
        rng = observation_rng(seed, i, t)
        out = {}
        for j in self.nbrs[i]:
            noise = rng.normal(size=DIM) / np.sqrt(self.b)
            keep = rng.random() < self.edge_fraction
            if keep:
                out[j] = self.positions[i] - self.positions[j] + noise
        return out

    def prior(self, variables):
        variables = tuple(variables)
        info = np.full(DIM * len(variables), self.prior_info)
        if var(0) in variables:
            k = variables.index(var(0))
            info[DIM * k:DIM * k + DIM] = self.anchor_info
        return GaussianDensity(variables, (DIM,) * len(variables), np.diag(info),
                               np.zeros(len(info)))

    def _evidence(self, i, meas, mode):
        """Agent ``i``'s measurements this round as one stacked linear evidence."""
        present = tuple(j for j in self.nbrs[i] if j in meas)
        if not present:
            return []
        key = (i, mode, present)
        model = self._stacked.get(key)
        if model is None:
            models = self.models_full[i] if mode == "full" else self.models_marg[i]
            H = np.vstack([m.H for m, j in zip(models, self.nbrs[i]) if j in meas])
            model = LinearGaussianModel(models[0].vars, models[0].dims, H, self.b * np.eye(H.shape[0]))
            self._stacked[key] = model
        return [LinearEvidence(model, np.concatenate([meas[j] for j in present]))]

    def _joint_evidence(self, full_ev):
        """All agents' full-state evidence merged into a single update."""
        items = [e for ev in full_ev for e in ev]
        if not items:
            return []
        H = np.vstack([e.model.H for e in items])
        return [LinearEvidence(LinearGaussianModel(self.all_vars, (DIM,) * self.n, H,
                                                   self.b * np.eye(H.shape[0])),
                               np.concatenate([e.z for e in items]))]

    # -- engine protocol -----------------------------------------------------
    def init(self, kind):
        ref = self.prior(self.all_vars)
        if kind == "centralized":
            est = ref
        elif kind == "distributed":
            est = [self.prior(self.all_vars) for _ in range(self.n)]
        elif kind == "marginal":
            est = [self.prior(self.layout.agent_subsets[i]) for i in range(self.n)]
        elif kind in ("bp", "circular-bp"):
            est = {i: self.prior((var(i),)) for i in range(self.n)}
        else:
            raise ValueError(kind)
        return LocalizationState(est, ref, {})

    def advance(self, kind, state, t, alpha, seed):
        meas = [self.measurements(i, t, seed) for i in range(self.n)]
        full_ev = [self._evidence(i, meas[i], "full") for i in range(self.n)]
        joint = self._joint_evidence(full_ev)
        ref = centralized_step(state.reference, joint, 1.0)
        if kind == "centralized":
            est = centralized_step(state.estimates, joint, alpha)
            return LocalizationState(est, ref)
        if kind == "distributed":
            mixed = distributed_mix(state.estimates, self.network)
            est = [centralized_step(v, ev, alpha) for v, ev in zip(mixed, full_ev)]
            return LocalizationState(est, ref)
        if kind == "marginal":
            mixed = marginal_mix(state.estimates, self.network, self.layout)
            est = [centralized_step(v, self._evidence(i, meas[i], "marginal"), alpha)
                   for i, v in enumerate(mixed)]
            return LocalizationState(est, ref)
        factors = {}
        for i in range(self.n):
            for j, z in meas[i].items():
                factors[(i, j)] = PairwiseFactor(i, j, self.b * np.eye(DIM), z)
        selfs = None
        if self.bp_self == "prior":
            selfs = {i: self.prior((var(i),)) for i in range(self.n)}
        if kind == "bp":
            est, out = bp_round(state.estimates, state.messages, factors, self_terms=selfs,
                                neighbors=self.nbrs, directed=True)
        else:
            est, out = circular_bp_round(state.estimates, state.messages, factors, self.bp,
                                         self_terms=selfs, neighbors=self.nbrs, directed=True)
        return LocalizationState(est, ref, out)

    def own_marginal(self, kind, state, i):
        est = state.estimates
        p = est if kind == "centralized" else est[i]
        return p if p.vars == (var(i),) else marginalize(p, (var(i),))

    def reference_marginals(self, reference):
        """Per-agent marginals of the reference posterior from one covariance inverse."""
        cov, mean = reference.covariance, reference.mean
        out = []
        for i in range(self.n):
            idx = reference.index((var(i),))
            om = np.linalg.inv(cov[np.ix_(idx, idx)])
            om = 0.5 * (om + om.T)
            out.append(GaussianDensity((var(i),), (DIM,), om, om @ mean[idx]))
        return out

    def _moments(self, kind, state):
        """Per agent (density, mean, covariance) of the current estimate."""
        est = state.estimates
        items = [est] * self.n if kind == "centralized" else [est[i] for i in range(self.n)]
        out, seen = [], {}
        for p in items:
            if id(p) not in seen:
                seen[id(p)] = (p, p.mean, p.covariance)
            out.append(seen[id(p)])
        return out

    def metrics(self, kind, state):
        ref = state.reference
        ref_mean, ref_cov = ref.mean, ref.covariance
        moments = self._moments(kind, state)
        gaps = self._consensus_gaps(kind, moments)
        own_m, own_c, ref_m, ref_c = [], [], [], []
        for i in range(self.n):
            p, mean, cov = moments[i]
            idx, ridx = p.index((var(i),)), ref.index((var(i),))
            own_m.append(mean[idx])
            own_c.append(cov[np.ix_(idx, idx)])
            ref_m.append(ref_mean[ridx])
            ref_c.append(ref_cov[np.ix_(ridx, ridx)])
        own_m = np.array(own_m)
        err = np.linalg.norm(own_m - self.positions, axis=1)
        kl = _gaussian_kl(np.array(ref_m), np.array(ref_c), own_m, np.array(own_c))
        return [(float(err[i]), gaps[i], float(kl[i])) for i in range(self.n)]

    def _consensus_gaps(self, kind, moments):
        """Per agent, the largest shared-marginal disagreement with a neighbour.

        Exact TV for at most three dimensions when ``exact_tv`` is set; else the
        Pinsker bound ``sqrt(KL / 2)`` (capped at 1), which keeps long runs cheap.
        """
        gaps = [0.0] * self.n
        if kind in ("centralized", "bp", "circular-bp"):
            return gaps
        groups = {}
        for i, j in self.network.edges:
            shared = self.layout.shared(i, j) if kind == "marginal" else self.all_vars
            (pi, mi, ci), (pj, mj, cj) = moments[i], moments[j]
            if self.exact_tv and DIM * len(shared) <= 3:
                g = tv_distance(marginalize(pi, shared), marginalize(pj, shared))
                gaps[i], gaps[j] = max(gaps[i], g), max(gaps[j], g)
                continue
            a, b = pi.index(shared), pj.index(shared)
            groups.setdefault(len(a), []).append((i, j, mi[a], ci[np.ix_(a, a)], mj[b], cj[np.ix_(b, b)]))
        for items in groups.values():
            m0, c0, m1, c1 = (np.stack([it[k] for it in items]) for k in (2, 3, 4, 5))
            kl = np.minimum(_gaussian_kl(m0, c0, m1, c1), _gaussian_kl(m1, c1, m0, c0))
            for (i, j, *_), v in zip(items, kl):
                g = min(1.0, float(np.sqrt(0.5 * v)))
                gaps[i], gaps[j] = max(gaps[i], g), max(gaps[j], g)
        return gaps

    def storage(self):
        return self.layout.storage()


def _gaussian_kl(m0, c0, m1, c1):
    """KL[N(m0, c0), N(m1, c1)] in moment form; leading axes are batch axes."""
    m0, m1 = np.asarray(m0), np.asarray(m1)
    diff = (m1 - m0)[..., None]
    trace = np.trace(np.linalg.solve(c1, c0), axis1=-2, axis2=-1)
    quad = (np.swapaxes(diff, -1, -2) @ np.linalg.solve(c1, diff))[..., 0, 0]
    logdet1 = np.linalg.slogdet(c1)[1]
    logdet0 = np.linalg.slogdet(c0)[1]
    return np.maximum(0.5 * (trace + quad - m0.shape[-1] + logdet1 - logdet0), 0.0)


def build_localization(n=8, topology="ring", b=1.0, seed=0, edge_fraction=1.0, bp_alpha=0.8,
                       weighting="sinkhorn", topology_seed=None, bp_self="belief"):
    """Localization scenario on ``n`` agents; positions and graph are seed-controlled."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x10C]))
    positions = draw_positions(n, rng)
    edges = make_topology(topology, n, seed=seed if topology_seed is None else topology_seed)
    network = Network.from_edges(n, edges, weighting=weighting)
    return LocalizationScenario(positions, network, b, edge_fraction=edge_fraction, bp_alpha=bp_alpha,
                                bp_self=bp_self)
