"""Command-line entry point: ``distsmd run`` and ``distsmd verify``."""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from multiprocessing import get_context
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from . import __version__
from .config import (PRESETS, SCHEMA_VERSION, ExperimentConfig, build_scenario, config_hash,
                     load_config, preset)
from .engine import run_rounds
from .estimators import make_schedule
from .verification import SUITES, run_suite

SEED_ENV = "MC_SEED_OVERRIDE"


def _truth(scenario):
    if hasattr(scenario, "positions"):
        return {"positions": scenario.positions.tolist()}
    if hasattr(scenario, "true_weights"):
        return {"true_weights": np.asarray(scenario.true_weights).tolist(),
                "centers": np.asarray(scenario.centers).tolist()}
    return {"truth": {k: float(v) for k, v in scenario.truth.items()}}


def execute(config_json, out_dir):
    """Run one expanded config; returns a summary row.  Safe to call in a worker."""
    config = ExperimentConfig.model_validate_json(config_json)
    scenario = build_scenario(config)
    trace = run_rounds(scenario, config.estimator.kind, make_schedule(config.estimator.schedule),
                       config.run.rounds, config.run.seed, cadence=config.run.cadence)
    name = config.run_name()
    out = Path(out_dir)
    trace.to_csv(out / f"{name}.csv")
    with open(out / f"{name}.truth.json", "w") as fh:
        json.dump(_truth(scenario), fh, sort_keys=True)
    rounds, err = trace.mean_error()
    after = rounds > 0
    s = config.scenario
    return {
        "run": name,
        "scenario": s.kind,
        "b": getattr(s, "b", ""),
        "topology": getattr(s, "topology", ""),
        "estimator": config.estimator.kind,
        "seed": config.run.seed,
        "mean_error": repr(float(err[after].mean())) if after.any() else "",
        "final_error": repr(float(err[-1])),
        "rounds": rounds[after].tolist(),
        "errors": err[after].tolist(),
    }


def _emit_plot(rows, path, title):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "distsmd"
    fig, ax = plt.subplots(figsize=(6, 4))
    for r in rows:
        ax.plot(r["rounds"], r["errors"], label=r["estimator"])
    ax.set_xlabel("round")
    ax.set_ylabel("network-average error")
    ax.set_title(title)
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def run_experiment(config, out_dir=None, jobs=1, emit_plot=False):
    """Run a config (expanding sweeps); writes CSVs, truths, manifest and summary."""
    out = Path(out_dir or config.run.out)
    out.mkdir(parents=True, exist_ok=True)
    runs = config.expand()
    payloads = [(c.model_dump_json(), str(out)) for c in runs]
    if jobs > 1 and len(runs) > 1:
        with get_context("spawn").Pool(min(jobs, len(runs))) as pool:
            rows = pool.starmap(execute, payloads, chunksize=1)
    else:
        rows = [execute(*p) for p in payloads]
    summary = out / "summary.csv"
    cols = ("run", "scenario", "b", "topology", "estimator", "seed", "mean_error", "final_error")
    with open(summary, "w", newline="") as fh:
        w = csv.DictWriter(fh, cols, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    manifest = {
        "config": config.model_dump(mode="json"),
        "config_hash": config_hash(config),
        "schema_version": SCHEMA_VERSION,
        "library_version": __version__,
        "runs": [{"run": r["run"], "csv": f"{r['run']}.csv",
                  "config_hash": config_hash(c)} for r, c in zip(rows, runs)],
        "summary": summary.name,
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    if emit_plot:
        groups = {}
        for r in rows:
            groups.setdefault((r["scenario"], r["b"], r["topology"], r["seed"]), []).append(r)
        for (kind, b, topo, seed), grp in groups.items():
            parts = (kind, f"b{b:g}" if b != "" else "", topo, f"s{seed}")
            tag = "_".join(str(x).replace(":", "") for x in parts if x != "")
            _emit_plot(grp, out / f"{tag}.svg", tag)
    return rows


def _config_from_args(args):
    if args.config:
        config = load_config(args.config)
    else:
        config = preset(args.scenario)
    data = config.model_dump(mode="json")
    estimators = args.estimator.split(",") if args.estimator else None
    if estimators and len(estimators) == 1:
        data["estimator"]["kind"] = estimators[0]
    elif estimators:
        data["sweep"] = dict(data.get("sweep") or {}, estimator=estimators)
    if args.alpha is not None:
        data["estimator"]["alpha"] = args.alpha
    if args.schedule is not None:
        data["estimator"]["schedule"] = args.schedule
    if args.rounds is not None:
        data["run"]["rounds"] = args.rounds
    if args.seed is not None:
        data["run"]["seed"] = args.seed
    if args.cadence is not None:
        data["run"]["cadence"] = args.cadence
    if args.out is not None:
        data["run"]["out"] = args.out
    override = os.environ.get(SEED_ENV)
    if override:
        data["run"]["seed"] = int(override)
        if data.get("sweep"):
            data["sweep"]["seeds"] = []
    return ExperimentConfig.model_validate(data)


def _format_validation(err):
    lines = []
    for e in err.errors():
        path = ".".join(str(p) for p in e["loc"])
        lines.append(f"{path or '<root>'}: {e['msg']}")
    return "\n".join(lines)


def build_parser():
    p = argparse.ArgumentParser(prog="distsmd", description="Distributed stochastic mirror descent experiments")
    p.add_argument("--version", action="version", version=f"distsmd {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a preset or a JSON config")
    src = r.add_mutually_exclusive_group(required=True)
    src.add_argument("--scenario", choices=sorted(PRESETS), help="built-in preset")
    src.add_argument("--config", help="path to a JSON experiment config")
    r.add_argument("--estimator", help="estimator kind, or a comma list to compare several")
    r.add_argument("--rounds", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--alpha", type=float, help="circular BP exponent")
    r.add_argument("--schedule", help='step sizes, e.g. "const:1" or "rm:1,1,0.75"')
    r.add_argument("--cadence", type=int, help="record metrics every k rounds")
    r.add_argument("--out", help="output directory")
    r.add_argument("--emit-plot", action="store_true", help="write an SVG of error vs round")
    r.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")
    r.add_argument("--dump-config", action="store_true", help="print the resolved config and exit")

    v = sub.add_parser("verify", help="run a numerical proposition suite")
    v.add_argument("suite", choices=sorted(SUITES))
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--report", help="also write the JSON report here")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "run":
        try:
            config = _config_from_args(args)
        except ValidationError as err:
            print(f"invalid config:\n{_format_validation(err)}", file=sys.stderr)
            return 2
        except (OSError, ValueError) as err:
            print(f"invalid config: {err}", file=sys.stderr)
            return 2
        if args.dump_config:
            print(config.model_dump_json(indent=2))
            return 0
        rows = run_experiment(config, jobs=max(1, args.jobs), emit_plot=args.emit_plot)
        for r in rows:
            print(f"{r['run']}: final error {float(r['final_error']):.4g}")
        return 0
    seed = int(os.environ.get(SEED_ENV, args.seed))
    report = run_suite(args.suite, seed=seed)
    text = report.to_json()
    print(text)
    if args.report:
        Path(args.report).write_text(text + "\n")
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
