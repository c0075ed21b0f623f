import numpy as np
import pytest

from distsmd.density import VariableLayout, kl_divergence, marginalize
from distsmd.engine import run_rounds
from distsmd.errors import CoverageError, LayoutError
from distsmd.estimators import Constant, RobbinsMonro
from distsmd.grid import grid_kl
from distsmd.network import Network
from distsmd.scenarios import build_localization, build_mapping, two_agent_problem
from distsmd.scenarios.grid_problem import BernoulliSensors, GridProblem
from distsmd.scenarios.localization import (ANCHOR_INFO, LocalizationScenario, draw_positions,
                                            localization_error, var)
from distsmd.scenarios.mapping import (MappingScenario, center_grid, mapping_error, ownership_fraction,
                                       robot_paths, tune_threshold)


class TestGridProblem:
    def test_sensor_bounds(self):
        s = BernoulliSensors(("a",), np.array([[1.0]]), np.array([0.0]), 3.0, 0.05)
        p = s.fire_prob(np.linspace(-50, 50, 101)[:, None])
        assert p.min() >= 0.05 - 1e-12 and p.max() <= 0.95 + 1e-12
        assert s.bound == pytest.approx(-np.log(0.05))

    def test_loglik_within_declared_bound(self):
        prob = two_agent_problem(seed=2)
        for i in range(2):
            ev = prob.evidence(i, 0, 0)
            assert ev.log_field.max() <= 0 and ev.log_field.min() >= -prob.sensors[i].bound

    def test_truth_is_unique_optimum(self):
        prob = two_agent_problem(seed=4)
        assert prob.identifiability_gap() >= 0.5
        star = prob.optimal_density()
        assert prob.objective(star) == pytest.approx(prob.optimal_objective())

    def test_truth_must_be_on_grid(self):
        prob = two_agent_problem(seed=0)
        with pytest.raises(LayoutError):
            GridProblem(prob.layout, prob.network, prob.axes, {"x0": 0.123, "x1": 0.0}, prob.sensors)

    def test_marginal_converges_quickly(self):
        prob = two_agent_problem(seed=1)
        tr = run_rounds(prob, "marginal", RobbinsMonro(), 300, seed=1, cadence=300)
        state = tr.final_state
        assert sum(grid_kl(prob.optimal_density(p.axes), p) for p in state) < 0.1


@pytest.fixture(scope="module")
def scen():
    return build_localization(n=5, topology="ring", b=2.0, seed=3)


class TestLocalization:
    def test_positions(self):
        pts = draw_positions(6, np.random.default_rng(0))
        assert np.all(pts[0] == 0)
        d = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
        assert d[np.triu_indices(6, 1)].min() >= 1.0

    def test_measurement_convention(self, scen):
        # z_ij ~ x_i - x_j with noise variance 1/b
        diffs = []
        for t in range(400):
            z = scen.measurements(1, t, seed=0)
            diffs.append(z[2] - (scen.positions[1] - scen.positions[2]))
        diffs = np.array(diffs)
        assert np.abs(diffs.mean(axis=0)).max() < 0.1
        assert diffs.var(axis=0).mean() == pytest.approx(1 / 2.0, rel=0.15)

    def test_edge_fraction(self):
        s = build_localization(n=5, topology="complete", b=1.0, seed=0, edge_fraction=0.5)
        kept = np.mean([len(s.measurements(0, t, 0)) / 4 for t in range(300)])
        assert kept == pytest.approx(0.5, abs=0.06)

    def test_anchor_prior(self, scen):
        p = scen.prior((var(0), var(2)))
        assert p.info_matrix[0, 0] == ANCHOR_INFO and p.info_matrix[2, 2] == scen.prior_info

    def test_layout_closed_neighbourhoods(self, scen):
        assert scen.layout.agent_subsets[0] == ("x0", "x1", "x4")
        marg, full = scen.storage()
        assert marg < full

    def test_centralized_matches_reference(self, scen):
        tr = run_rounds(scen, "centralized", Constant(1.0), 5, seed=2)
        assert max(tr.kl_ref) < 1e-6

    @pytest.mark.parametrize("kind", LocalizationScenario.kinds)
    def test_errors_decay(self, scen, kind):
        tr = run_rounds(scen, kind, Constant(1.0), 120, seed=1, cadence=40)
        _, err = tr.mean_error()
        assert err[-1] < err[1]

    def test_localization_error_helper(self, scen):
        tr = run_rounds(scen, "distributed", Constant(1.0), 3, seed=0, metrics=False)
        est = tr.final_state.estimates
        errs, mean = localization_error(est, scen.positions)
        assert len(errs) == 5 and mean == pytest.approx(errs.mean())
        with pytest.raises(LayoutError):
            localization_error({0: marginalize(est[0], ("x1",))}, scen.positions)

    def test_bad_construction(self, scen):
        with pytest.raises(LayoutError):
            LocalizationScenario(scen.positions + 1.0, scen.network, 1.0)
        with pytest.raises(ValueError):
            LocalizationScenario(scen.positions, scen.network, -1.0)

    def test_exact_tv_option_close_to_bound(self):
        s = build_localization(n=4, topology="line", b=1.0, seed=0)
        s.exact_tv = True
        tr = run_rounds(s, "marginal", Constant(1.0), 3, seed=0)
        assert max(tr.consensus_tv) <= 1.0

    def test_marginal_kl_reference_small_at_end(self, scen):
        tr = run_rounds(scen, "marginal", Constant(1.0), 200, seed=0, cadence=200)
        ref = scen.reference_marginals(tr.final_state.reference)
        own = scen.own_marginal("marginal", tr.final_state, 2)
        assert kl_divergence(ref[2], own) == pytest.approx(tr.kl_ref[-3], rel=1e-6)


class TestMapping:
    def test_center_grid(self):
        c, (nx, ny) = center_grid(60)
        assert len(c) == 60 and nx * ny == 60 and nx >= ny

    def test_storage_strictly_smaller(self):
        s = build_mapping(robots=3, n_centers=60, seed=0)
        marg, full = s.storage()
        assert marg < full
        assert sum(s.counts()) == marg

    def test_coverage_error(self):
        centers, _ = center_grid(24)
        paths = robot_paths(centers, 2)
        with pytest.raises(CoverageError):
            MappingScenario(centers, paths, 0.1, np.zeros(24))

    def test_tune_threshold_hits_target(self):
        centers, _ = center_grid(200)
        paths = robot_paths(centers, 4)
        th = tune_threshold(paths, centers, 0.3)
        assert ownership_fraction(paths, centers, th) >= 0.3
        assert ownership_fraction(paths, centers, th - 0.5) < 0.3 + 0.05

    def test_mapping_error(self):
        err, prob = mapping_error(np.zeros(2), np.ones((4, 2)), [1, 0, 1, 0])
        assert err == pytest.approx(0.5) and np.allclose(prob, 0.5)
        with pytest.raises(LayoutError):
            mapping_error(np.zeros(3), np.ones((4, 2)), [1, 0, 1, 0])

    @pytest.mark.parametrize("kind", MappingScenario.kinds)
    def test_short_run_improves(self, kind):
        s = build_mapping(robots=2, n_centers=24, seed=1)
        tr = run_rounds(s, kind, Constant(1.0), 400, seed=1, cadence=200)
        _, err = tr.mean_error()
        assert err[-1] < err[0]

    def test_densities(self):
        s = build_mapping(robots=2, n_centers=24, seed=1)
        st = s.init("marginal")
        ds = s.densities("marginal", st)
        assert [d.dim for d in ds] == s.counts()


def test_layout_mismatch_rejected():
    prob = two_agent_problem(seed=0)
    lay = VariableLayout({"x1": 1, "x0": 1}, {0: ("x0", "x1"), 1: ("x1",)})
    with pytest.raises(LayoutError):
        GridProblem(lay, Network(np.full((2, 2), 0.5)), prob.axes, prob.truth, prob.sensors)
