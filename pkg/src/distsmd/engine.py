"""Synchronous round engine and per-round metric traces."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import DistSMDError, RoundError

TRACE_COLUMNS = ("round", "agent", "error", "consensus_tv", "kl_ref")


def observation_rng(seed, agent, t):
    """Independent random stream for one agent's observation at round ``t``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(agent) + 1, int(t)]))


@dataclass
class RoundTrace:
    """Per-round, per-agent metrics; round 0 holds the initial metrics."""

    rounds: list = field(default_factory=list)
    agents: list = field(default_factory=list)
    error: list = field(default_factory=list)
    consensus_tv: list = field(default_factory=list)
    kl_ref: list = field(default_factory=list)
    alphas: dict = field(default_factory=dict)

    def record(self, t, rows):
        if self.rounds and t < self.rounds[-1]:
            raise ValueError("round indices must be nondecreasing")
        for agent, (err, tv, kl) in enumerate(rows):
            vals = (float(err), float(tv), float(kl))
            if not all(np.isfinite(vals)):
                raise DistSMDError(f"non-finite metric at round {t}, agent {agent}: {vals}")
            self.rounds.append(int(t))
            self.agents.append(agent)
            self.error.append(vals[0])
            self.consensus_tv.append(vals[1])
            self.kl_ref.append(vals[2])

    def __len__(self):
        return len(self.rounds)

    def as_arrays(self):
        return {
            "round": np.asarray(self.rounds, dtype=int),
            "agent": np.asarray(self.agents, dtype=int),
            "error": np.asarray(self.error),
            "consensus_tv": np.asarray(self.consensus_tv),
            "kl_ref": np.asarray(self.kl_ref),
        }

    def mean_error(self):
        """Network-average error per recorded round: (rounds, values)."""
        arr = self.as_arrays()
        rounds = np.unique(arr["round"])
        return rounds, np.array([arr["error"][arr["round"] == r].mean() for r in rounds])

    def metric(self, name, reduce=np.mean):
        arr = self.as_arrays()
        rounds = np.unique(arr["round"])
        return rounds, np.array([reduce(arr[name][arr["round"] == r]) for r in rounds])

    def to_csv(self, path_or_buf=None, include_initial=False):
        """Write ``round,agent,error,consensus_tv,kl_ref`` rows (repr-exact floats)."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r, a, e, c, k in zip(self.rounds, self.agents, self.error, self.consensus_tv, self.kl_ref):
            if r == 0 and not include_initial:
                continue
            w.writerow((r, a, repr(e), repr(c), repr(k)))
        text = buf.getvalue()
        if path_or_buf is None:
            return text
        if hasattr(path_or_buf, "write"):
            path_or_buf.write(text)
        else:
            with open(path_or_buf, "w", newline="") as fh:
                fh.write(text)
        return text


def run_rounds(scenario, kind, schedule, T, seed, cadence=1, metrics=True, callback=None):
    """Run ``T`` synchronous rounds of estimator ``kind`` on ``scenario``.

    ``schedule(t, state)`` gives the step size of round ``t`` (t = 0, 1, ...).
    Metrics are recorded initially and after every ``cadence``-th round and
    after the last one.  The run is a pure function of its arguments.
    """
    if T < 0:
        raise ValueError("T must be nonnegative")
    if kind not in scenario.kinds:
        raise ValueError(f"scenario {scenario.name!r} does not support estimator {kind!r}")
    trace = RoundTrace()
    state = scenario.init(kind)
    if metrics:
        trace.record(0, scenario.metrics(kind, state))
    for t in range(T):
        try:
            alpha = float(schedule(t, state))
            trace.alphas[t] = alpha
            state = scenario.advance(kind, state, t, alpha, seed)
            if callback is not None:
                callback(t + 1, state)
            if metrics and ((t + 1) % cadence == 0 or t + 1 == T):
                trace.record(t + 1, scenario.metrics(kind, state))
        except RoundError:
            raise
        except Exception as exc:
            raise RoundError(t + 1, exc) from exc
    trace.final_state = state
    return trace
