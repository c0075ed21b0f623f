"""Kernel-logistic occupancy mapping with robots that each learn nearby weights.

The map is ``P(occupied | x) = sigmoid(sum_s w_s k_s(x))`` with kernels
``k_s(x) = g1 exp(-g2 ||x - c_s||^2)`` on a grid of centres.  Robot ``i``
sweeps a vertical strip of the map and only estimates the weights of
centres within ``threshold`` of its path; neighbouring strips overlap, so
adjacent robots share weights.  Estimates are diagonal Gaussians updated by
partial-consensus Gaussian variational inference.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.spatial.distance import cdist

from ..density import GaussianDensity, VariableLayout
from ..engine import observation_rng
from ..errors import CoverageError, LayoutError
from ..gaussian import IndexMaps, LogisticLogLikelihood, diag_gvi_kernel, diag_mix
from ..network import Network, line_edges, validate_marginal_consensus

SPACING = 10.0


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def center_grid(n_centers, spacing=SPACING, aspect=1.6):
    """``n_centers`` kernel centres on an ``nx x ny`` grid (``nx * ny == n_centers``)."""
    best = None
    for ny in range(1, n_centers + 1):
        if n_centers % ny:
            continue
        nx = n_centers // ny
        score = abs(np.log(nx / ny) - np.log(aspect))
        if best is None or score < best[0]:
            best = (score, nx, ny)
    _, nx, ny = best
    xs, ys = np.meshgrid(np.arange(nx) * spacing, np.arange(ny) * spacing, indexing="ij")
    return np.column_stack([xs.ravel(), ys.ravel()]), (nx, ny)


def serpentine(x_lo, x_hi, y_lo, y_hi, lane, step):
    """Lawn-mower path over a rectangle: vertical passes ``lane`` apart."""
    xs = np.arange(x_lo + lane / 2, x_hi, lane) if x_hi - x_lo > lane else np.array([(x_lo + x_hi) / 2])
    path = []
    for k, x in enumerate(xs):
        ys = np.arange(y_lo, y_hi + 1e-9, step)
        ys = ys if k % 2 == 0 else ys[::-1]
        path.extend((x, y) for y in ys)
    return np.array(path)


def kernel_features(points, centers, g1, g2):
    d2 = cdist(np.atleast_2d(points), centers, "sqeuclidean")
    return g1 * np.exp(-g2 * d2)


def ownership(paths, centers, threshold):
    """Boolean (robots, centers): centre within ``threshold`` of the robot's path."""
    return np.array([cdist(centers, p).min(axis=1) <= threshold for p in paths])


@dataclass
class MappingState:
    means: list
    precisions: list


class MappingScenario:
    """Robots on a line communication graph learning overlapping weight subsets."""

    kinds = ("centralized", "distributed", "marginal")
    name = "mapping"

    def __init__(self, centers, paths, threshold, true_weights, g1=1.0, g2=None, sensor_range=SPACING,
                 prior_info=1.0, batch=1, n_verify=200, seed=0):
        self.centers = np.asarray(centers, dtype=float)
        self.paths = [np.asarray(p, dtype=float) for p in paths]
        self.n = len(self.paths)
        self.threshold = float(threshold)
        self.g1 = float(g1)
        self.g2 = 0.5 / SPACING ** 2 if g2 is None else float(g2)
        self.true_weights = np.asarray(true_weights, dtype=float)
        self.sensor_range = float(sensor_range)
        self.prior_info = float(prior_info)
        self.batch = int(batch)
        self.seed = int(seed)
        own = ownership(self.paths, self.centers, self.threshold)
        orphan = np.flatnonzero(~own.any(axis=0))
        if orphan.size:
            raise CoverageError(f"kernel centres {orphan.tolist()} are owned by no robot")
        self.owned = [np.flatnonzero(row) for row in own]
        self.variables = {f"w{s}": 1 for s in range(len(self.centers))}
        names = list(self.variables)
        self.layout = VariableLayout(self.variables, {i: tuple(names[s] for s in self.owned[i])
                                                      for i in range(self.n)})
        self.full_layout = VariableLayout.full(self.variables, range(self.n))
        self.network = Network.from_edges(self.n, line_edges(self.n)) if self.n > 1 else Network(np.ones((1, 1)))
        self._rows = [[(j, self.network.weights[i, j]) for j in self.network.neighbors(i)]
                      for i in range(self.n)]
        self.subgraphs = validate_marginal_consensus(self.layout, self.network)
        self.maps = {kind: {(i, j): IndexMaps.between(lay, i, j)
                            for i in range(self.n) for j in self.network.neighbors(i)}
                     for kind, lay in (("marginal", self.layout), ("distributed", self.full_layout))}
        vrng = np.random.default_rng(np.random.SeedSequence([self.seed, 0x7E51]))
        self.verify = [self._draw(i, vrng, n_verify) for i in range(self.n)]

    # -- data ---------------------------------------------------------------
    def occupancy(self, points):
        return _sigmoid(kernel_features(points, self.centers, self.g1, self.g2) @ self.true_weights)

    def _draw(self, i, rng, k, with_features=False):
        """``k`` labelled points seen from random poses on robot ``i``'s path."""
        poses = self.paths[i][rng.integers(len(self.paths[i]), size=k)]
        ang = rng.uniform(0, 2 * np.pi, size=k)
        rad = self.sensor_range * np.sqrt(rng.random(k))
        pts = poses + np.column_stack([rad * np.cos(ang), rad * np.sin(ang)])
        phi = kernel_features(pts, self.centers, self.g1, self.g2)
        labels = (rng.random(k) < _sigmoid(phi @ self.true_weights)).astype(float)
        return (pts, labels, phi) if with_features else (pts, labels)

    def features(self, i, points, kind="marginal"):
        cols = self.owned[i] if kind == "marginal" else np.arange(len(self.centers))
        return kernel_features(points, self.centers[cols], self.g1, self.g2)

    def loglik(self, i, t, seed, kind):
        _, labels, phi = self._draw(i, observation_rng(seed, i, t), self.batch, with_features=True)
        return LogisticLogLikelihood(phi[:, self.owned[i]] if kind == "marginal" else phi, labels)

    # -- engine protocol -------------------------------------------------------
    def init(self, kind):
        if kind == "centralized":
            d = len(self.centers)
            return MappingState([np.zeros(d)], [np.full(d, self.prior_info)])
        if kind not in self.kinds:
            raise ValueError(kind)
        dims = [len(self.owned[i]) if kind == "marginal" else len(self.centers) for i in range(self.n)]
        return MappingState([np.zeros(d) for d in dims], [np.full(d, self.prior_info) for d in dims])

    def advance(self, kind, state, t, alpha, seed):
        if kind == "centralized":
            mu, om = state.means[0], state.precisions[0]
            for i in range(self.n):
                mu, om = diag_gvi_kernel(mu, om, self.loglik(i, t, seed, "full"), alpha=alpha)
            return MappingState([mu], [om])
        maps = self.maps[kind]
        means, precs = [], []
        for i in range(self.n):
            mu_v, om_v = diag_mix(state.means, state.precisions, self._rows[i], maps, i)
            mu, om = diag_gvi_kernel(mu_v, om_v, self.loglik(i, t, seed, kind), alpha=alpha)
            means.append(mu)
            precs.append(om)
        return MappingState(means, precs)

    def agent_weights(self, kind, state, i):
        """Agent ``i``'s mean weights over its own centres."""
        if kind == "centralized":
            return state.means[0][self.owned[i]]
        if kind == "marginal":
            return state.means[i]
        return state.means[i][self.owned[i]]

    def metrics(self, kind, state):
        gaps = self.shared_disagreement(kind, state, per_agent=True)
        rows = []
        for i in range(self.n):
            err, _ = mapping_error(self.agent_weights(kind, state, i), self.features(i, self.verify[i][0]),
                                   self.verify[i][1])
            rows.append((err, gaps[i], 0.0))
        return rows

    def shared_disagreement(self, kind, state, per_agent=False):
        """Largest |mean difference| on shared weights between neighbouring robots."""
        gaps = np.zeros(self.n)
        if kind != "centralized":
            maps = self.maps[kind]
            for i, j in self.network.edges:
                m = maps[(i, j)]
                if len(m.shared_i):
                    g = float(np.max(np.abs(state.means[i][m.shared_i] - state.means[j][m.shared_j])))
                    gaps[i] = max(gaps[i], g)
                    gaps[j] = max(gaps[j], g)
        return gaps if per_agent else float(gaps.max())

    def densities(self, kind, state):
        """Agent estimates as diagonal :class:`GaussianDensity` objects."""
        lay = self.layout if kind == "marginal" else self.full_layout
        out = []
        for i, (mu, om) in enumerate(zip(state.means, state.precisions)):
            vs = lay.agent_subsets[i] if kind != "centralized" else tuple(self.variables)
            out.append(GaussianDensity(vs, (1,) * len(vs), np.diag(om), om * mu))
        return out

    def storage(self):
        """(sum of per-agent parameter counts, robots * centres)."""
        return self.layout.storage()

    def counts(self):
        return [len(o) for o in self.owned]


def mapping_error(weights, features, labels):
    """Mean ``|sigmoid(Phi w) - y|`` and the per-point occupancy probabilities."""
    features = np.atleast_2d(features)
    weights = np.asarray(weights, dtype=float).reshape(-1)
    if features.shape[1] != weights.shape[0]:
        raise LayoutError(f"{weights.shape[0]} weights for {features.shape[1]} features")
    prob = _sigmoid(features @ weights)
    return float(np.mean(np.abs(prob - np.asarray(labels, dtype=float)))), prob


def blob_weights(centers, rng, w0, n_blobs=None, radius=None):
    """``+w0`` on centres inside random discs (occupied), ``-w0`` elsewhere."""
    lo, hi = centers.min(axis=0), centers.max(axis=0)
    span = hi - lo
    n_blobs = n_blobs or max(2, int(np.sqrt(len(centers)) // 2))
    radius = radius or 0.12 * float(span.max())
    w = np.full(len(centers), -w0)
    for _ in range(n_blobs):
        c = lo + rng.random(2) * span
        w[np.linalg.norm(centers - c, axis=1) <= radius] = w0
    return w


def robot_paths(centers, robots, overlap=0.0, lane=None, step=None):
    """One serpentine path per robot over equal vertical strips of the map."""
    lo, hi = centers.min(axis=0), centers.max(axis=0)
    edges = np.linspace(lo[0], hi[0], robots + 1)
    lane = lane or SPACING
    step = step or SPACING / 2
    paths = []
    for i in range(robots):
        a = max(lo[0], edges[i] - overlap)
        b = min(hi[0], edges[i + 1] + overlap)
        paths.append(serpentine(a, b, lo[1], hi[1], lane, step))
    return paths


def ownership_fraction(paths, centers, threshold):
    own = ownership(paths, centers, threshold)
    return own.sum() / own.size


def tune_threshold(paths, centers, target=0.2):
    """Smallest threshold whose mean ownership fraction reaches ``target`` (bisection)."""
    lo = 0.0
    hi = float(np.ptp(centers, axis=0).max()) + 1.0
    f = lambda th: ownership_fraction(paths, centers, th) - target  # noqa: E731
    if f(hi) < 0:
        raise CoverageError(f"ownership target {target} unreachable")
    if f(lo) >= 0:
        return lo
    th = brentq(f, lo, hi, xtol=1e-6)
    # brentq may stop just below the jump of this step function
    return th if f(th) >= 0 else th + 1e-5


def build_mapping(robots=3, n_centers=60, threshold=None, seed=0, w0=1.5, target_ownership=None,
                  **kwargs):
    """Mapping scenario; ``threshold=None`` picks ``2 * SPACING`` or tunes to ``target_ownership``."""
    if robots < 1 or n_centers < 1:
        raise ValueError("robots and centres must be positive")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x3A9]))
    centers, _ = center_grid(n_centers)
    paths = robot_paths(centers, robots)
    if threshold is None:
        threshold = (tune_threshold(paths, centers, target_ownership)
                     if target_ownership is not None else 2.0 * SPACING)
    weights = blob_weights(centers, rng, w0)
    return MappingScenario(centers, paths, threshold, weights, seed=seed, **kwargs)
