import io

import numpy as np
import pytest

from distsmd.engine import TRACE_COLUMNS, RoundTrace, observation_rng, run_rounds
from distsmd.errors import DistSMDError, RoundError
from distsmd.estimators import Constant, RobbinsMonro
from distsmd.scenarios.grid_problem import two_agent_problem


@pytest.fixture(scope="module")
def problem():
    return two_agent_problem(seed=3)


def test_zero_rounds_only_initial(problem):
    tr = run_rounds(problem, "marginal", RobbinsMonro(), 0, seed=1)
    assert set(tr.rounds) == {0} and len(tr) == problem.n_agents
    assert tr.to_csv().strip() == ",".join(TRACE_COLUMNS)


def test_deterministic(problem):
    a = run_rounds(problem, "marginal", RobbinsMonro(), 25, seed=5).to_csv()
    b = run_rounds(problem, "marginal", RobbinsMonro(), 25, seed=5).to_csv()
    c = run_rounds(problem, "marginal", RobbinsMonro(), 25, seed=6).to_csv()
    assert a == b and a != c


def test_cadence(problem):
    tr = run_rounds(problem, "distributed", Constant(0.5), 10, seed=0, cadence=4)
    assert sorted(set(tr.rounds)) == [0, 4, 8, 10]
    assert len(tr.alphas) == 10


def test_unknown_kind(problem):
    with pytest.raises(ValueError):
        run_rounds(problem, "bp", Constant(1.0), 3, seed=0)


def test_round_error_carries_index(problem):
    def schedule(t, state):
        if t == 3:
            raise FloatingPointError("boom")
        return 0.5
    with pytest.raises(RoundError) as err:
        run_rounds(problem, "marginal", schedule, 10, seed=0)
    assert err.value.round_index == 4


def test_csv_contract(problem):
    tr = run_rounds(problem, "marginal", RobbinsMonro(), 7, seed=2)
    buf = io.StringIO()
    tr.to_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "round,agent,error,consensus_tv,kl_ref"
    assert len(lines) == 1 + 7 * problem.n_agents
    row = lines[1].split(",")
    assert row[:2] == ["1", "0"] and float(row[2]) == tr.error[problem.n_agents]


def test_trace_rejects_nonfinite():
    tr = RoundTrace()
    with pytest.raises(DistSMDError):
        tr.record(1, [(np.nan, 0.0, 0.0)])
    tr.record(2, [(1.0, 0.0, 0.0)])
    with pytest.raises(ValueError):
        tr.record(1, [(1.0, 0.0, 0.0)])


def test_mean_error_and_metric():
    tr = RoundTrace()
    tr.record(0, [(1.0, 0.1, 2.0), (3.0, 0.3, 4.0)])
    tr.record(1, [(0.5, 0.0, 1.0), (1.5, 0.2, 1.0)])
    r, e = tr.mean_error()
    np.testing.assert_array_equal(r, [0, 1])
    np.testing.assert_allclose(e, [2.0, 1.0])
    np.testing.assert_allclose(tr.metric("consensus_tv", np.max)[1], [0.3, 0.2])


def test_observation_streams_independent():
    a = observation_rng(0, 1, 2).random(3)
    assert np.array_equal(a, observation_rng(0, 1, 2).random(3))
    assert not np.array_equal(a, observation_rng(0, 2, 2).random(3))
    assert not np.array_equal(a, observation_rng(0, 1, 3).random(3))
