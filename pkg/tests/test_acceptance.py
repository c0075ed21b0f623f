"""End-to-end acceptance checks.

Each test prints one ``ACCEPTANCE nn PASS|FAIL`` line (collected in the
terminal summary) and then asserts the same condition.  These are slow;
run them alone with ``pytest tests/test_acceptance.py -v -s``.
"""
import time

import numpy as np
import pytest

from distsmd.cli import run_experiment
from distsmd.config import ExperimentConfig, build_scenario, preset
from distsmd.engine import run_rounds
from distsmd.estimators import make_schedule
from distsmd.scenarios import build_mapping
from distsmd.verification import (contraction, manifold_z, marginal_convergence, mixing_propositions,
                                  oracle_equivalence, rate_bound, tv_iterate_gap)

pytestmark = pytest.mark.slow

LOC_KINDS = ("distributed", "marginal", "bp", "circular-bp")


def worst(report):
    return ", ".join(f"{p.name}={p.max_violation:.2e}/{p.instances}" for p in report.propositions)


def test_01_oracle_equivalence(acceptance_report):
    rep = oracle_equivalence(n_cases=200, seed=0, tol=1e-5)
    ok = rep.passed and rep.seconds < 30
    acceptance_report(1, "Gaussian closed forms match grid oracle", ok, f"{worst(rep)}; {rep.seconds:.1f}s")
    assert ok


def test_02_mixing_kl_decrease(acceptance_report):
    rep = mixing_propositions(n_instances=500, seed=0)
    ok = rep.get("mixing-kl-nonincrease").passed and rep.get("mixing-kl-strict-decrease").passed
    acceptance_report(2, "mixing does not increase divergence sum", ok, worst(rep))
    assert ok


def test_03_manifold(acceptance_report):
    rep = manifold_z(n_instances=100, seed=0)
    ok = rep.passed
    acceptance_report(3, "log-normaliser sum characterises the coherent manifold", ok, worst(rep))
    assert ok


def test_04_iterate_gap(acceptance_report):
    rep = tv_iterate_gap(n_runs=50, T=200, seed=0)
    ok = rep.passed and all(p.max_violation == 0 for p in rep.propositions)
    acceptance_report(4, "iterate TV gaps within alpha L / 2", ok, worst(rep))
    assert ok


def test_05_contraction(acceptance_report):
    rep = contraction(topologies=("ring", "line", "complete"), n_agents=5, runs=5, T=100, seed=0)
    tv = [p for p in rep.propositions if p.name.startswith("tv-")]
    ok = all(p.passed for p in tv)
    detail = "; ".join(f"{p.name.split(':')[1]} sigma={p.detail['sigma']:.3f} worst={p.detail['worst_factor']:.3f}"
                       for p in tv)
    log_ok = all(p.passed for p in rep.propositions if p.name.startswith("log-"))
    acceptance_report(5, "TV consensus gap contracts by sigma(A)", ok,
                      f"{detail}; log-domain form holds={log_ok}")
    assert ok


def test_06_centralized_rate(acceptance_report):
    rep = rate_bound(n_seeds=20, checkpoints=(10, 100, 1000), seed=0)
    ok = rep.passed
    acceptance_report(6, "centralized rate bound at t=10,100,1000", ok, worst(rep))
    assert ok


def first_below(curve, level):
    hit = np.nonzero(curve[1:] <= level)[0]
    return int(hit[0]) + 1 if len(hit) else np.inf


def test_07_fig2(acceptance_report):
    t0 = time.perf_counter()
    curves = {}
    for kind in LOC_KINDS:
        cfg = preset("localization-fig2", estimator={"kind": kind})
        tr = run_rounds(build_scenario(cfg), kind, make_schedule(cfg.estimator.schedule),
                        cfg.run.rounds, cfg.run.seed)
        curves[kind] = tr.mean_error()[1]
    seconds = time.perf_counter() - t0
    ratio = {k: e[1600] / e[1] for k, e in curves.items()}
    # speed is measured against the common initial error (all means start at the origin)
    reach = {k: first_below(e, 0.1 * e[0]) for k, e in curves.items()}
    own_t1 = {k: first_below(e, 0.1 * e[1]) for k, e in curves.items()}
    ok = (all(r < 0.2 for r in ratio.values())
          and max(reach["distributed"], reach["marginal"]) < reach["bp"]
          and seconds < 120)
    detail = ("ratio " + " ".join(f"{k}={v:.3f}" for k, v in ratio.items())
              + "; rounds to 10% of initial " + " ".join(f"{k}={v}" for k, v in reach.items())
              + "; of own t=1 " + " ".join(f"{k}={v}" for k, v in own_t1.items()) + f"; {seconds:.0f}s")
    acceptance_report(7, "ring localization: all estimators converge, SMD faster than BP", ok, detail)
    assert ok


def test_08_fig3(acceptance_report, tmp_path):
    # line graph (7 edges), b=10, 20 seeds, error at T=500
    line = preset("localization-fig3-sweep", run={"cadence": 500},
                  sweep={"b": [10.0], "topology": ["edges:7"],
                         "estimator": ["distributed", "marginal", "circular-bp"], "seeds": list(range(20))})
    rows = run_experiment(line, tmp_path / "line")
    err = {k: np.mean([float(r["final_error"]) for r in rows if r["estimator"] == k])
           for k in ("distributed", "marginal", "circular-bp")}
    order_ok = err["distributed"] <= err["marginal"] <= err["circular-bp"]
    small_ok = err["distributed"] < 0.05

    # full sweep, timed
    sweep = preset("localization-fig3-sweep")
    assert len(sweep.expand()) == 96
    t0 = time.perf_counter()
    rows = run_experiment(sweep, tmp_path / "sweep", jobs=8)
    seconds = time.perf_counter() - t0
    fin = {(r["topology"], float(r["b"]), r["estimator"]): float(r["final_error"]) for r in rows}
    dense = [t for t in {r["topology"] for r in rows} if int(t.split(":")[1]) >= 20]
    gaps = {t: fin[(t, 10.0, "bp")] / fin[(t, 10.0, "marginal")] for t in sorted(dense)}
    dense_ok = all(0.5 <= g <= 2.0 for g in gaps.values())
    time_ok = seconds < 600

    ok = order_ok and small_ok and dense_ok and time_ok
    detail = ("line b=10 " + " ".join(f"{k}={v:.4f}" for k, v in err.items())
              + "; dense bp/marginal " + " ".join(f"{t}={g:.2f}" for t, g in gaps.items())
              + f"; sweep {seconds:.0f}s")
    acceptance_report(8, "sweep orderings: full <= marginal <= circular BP, dense BP ~ marginal", ok, detail)
    assert ok


def test_09_marginal_convergence(acceptance_report):
    rep = marginal_convergence(n_seeds=50, T=2000, seed=0)
    ok = rep.passed
    acceptance_report(9, "marginal SMD median KL < 1e-2 by t=2000", ok,
                      f"median={rep.propositions[0].detail['median']:.2e}")
    assert ok


def test_10_storage(acceptance_report):
    strict = []
    for robots, centers in ((2, 24), (3, 60), (4, 120), (5, 200)):
        for seed in range(3):
            marg, full = build_mapping(robots=robots, n_centers=centers, seed=seed).storage()
            strict.append(marg < full)
    marg, full = build_mapping(robots=7, n_centers=1000, target_ownership=0.2, seed=0).storage()
    frac = marg / full
    ok = all(strict) and frac < 0.25
    acceptance_report(10, "marginal storage strictly below full replication", ok,
                      f"{sum(strict)}/{len(strict)} strict; 7x1000: {marg}/{full} = {frac:.1%}")
    assert ok


def test_11_mapping(acceptance_report):
    cfg = preset("mapping-desk")
    finals, gaps = [], []
    for seed in range(10):
        c = cfg.model_copy(update={"run": cfg.run.model_copy(update={"seed": seed, "cadence": 5000})})
        scen = build_scenario(c)
        tr = run_rounds(scen, "marginal", make_schedule(c.estimator.schedule), c.run.rounds, seed,
                        cadence=c.run.cadence)
        finals.append(tr.mean_error()[1][-1])
        gaps.append(scen.shared_disagreement("marginal", tr.final_state))
    med = float(np.median(finals))
    ok = med < 0.15 and max(gaps) < 1e-2
    acceptance_report(11, "desk mapping L1 error and shared-weight agreement", ok,
                      f"median L1={med:.4f}; max disagreement={max(gaps):.2e}")
    assert ok


def test_12_determinism(acceptance_report, tmp_path):
    short = {"localization-fig2": {"rounds": 200}, "localization-fig3-sweep": {"rounds": 20},
             "mapping-desk": {"rounds": 2000}}
    mismatched = []
    for name, run in short.items():
        cfg = preset(name, run=run)
        for d in ("a", "b"):
            run_experiment(cfg, tmp_path / name / d)
        for f in sorted((tmp_path / name / "a").glob("*.csv")):
            if f.read_bytes() != (tmp_path / name / "b" / f.name).read_bytes():
                mismatched.append(f"{name}/{f.name}")
    ok = not mismatched
    acceptance_report(12, "preset reruns give byte-identical CSVs", ok,
                      f"{len(mismatched)} mismatched" + (f": {mismatched[:3]}" if mismatched else ""))
    assert ok


def test_config_roundtrip_is_exact():
    cfg = preset("localization-fig3-sweep")
    assert ExperimentConfig.model_validate_json(cfg.model_dump_json()) == cfg
