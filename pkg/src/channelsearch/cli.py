"""Command line: ``gen``, ``run``, ``bench`` and ``report`` subcommands."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .harness import (ExperimentSpec, aggregate, benchmark_config, full_coverage_times, load_records, paper_spec,
                      report, run_experiment)
from .scenario import SHAPES, ScenarioError, generate_scenario, generate_suite, load_scenario, save_scenario
from .simkernel import PLANNERS, MissionConfig, run_mission

RESULTS_FILE = "results.jsonl"


def _load_config(path: str | None) -> MissionConfig:
    """The ``--config`` file, or the benchmark preset when none is given."""
    if path is None:
        return benchmark_config()
    with open(path) as f:
        return MissionConfig.from_dict(json.load(f))


def _scenarios(paths: list[str]) -> list:
    out = []
    for p in paths:
        p = Path(p)
        files = sorted(p.glob("*.json")) if p.is_dir() else [p]
        out += [load_scenario(f) for f in files]
    return out


def cmd_gen(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.shape:
        scenarios = [generate_scenario(args.shape, seed=args.seed, rotation=args.rotation)]
    else:
        scenarios = generate_suite(args.suite, seed=args.seed, rotation=args.rotation)
    for s in scenarios:
        print(save_scenario(s, out / f"{s.name}.json"))
    return 0


def cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    cfg = _load_config(args.config).with_overrides(seed=args.seed, depth_threshold=args.depth_threshold_ft,
                                                   timeout=args.timeout_s)
    rec = run_mission(scenario, args.planner, args.vehicles, cfg)
    line = rec.to_json()
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "record.json").write_text(line + "\n")
    status = "found" if rec.found else "timeout"
    print(f"{rec.scenario} {rec.planner} n={rec.n_vehicles} seed={rec.seed}: {status} after {rec.duration_s:g} s, "
          f"time-on-path ratio {rec.time_on_path_ratio:.3f}")
    return 0


def cmd_bench(args) -> int:
    cfg = _load_config(args.config).with_overrides(timeout=args.timeout_s)
    if args.scenario:
        scenarios = _scenarios(args.scenario)
    else:
        scenarios = generate_suite("paper" if args.paper else "acceptance", seed=args.seed)
    if args.paper:
        spec = paper_spec(scenarios, args.seed, cfg)
        if args.depth_threshold_ft is not None:
            spec = ExperimentSpec(spec.scenarios, spec.planners, spec.vehicle_counts, spec.trials,
                                  spec.trials_per_planner, spec.base_seed, args.depth_threshold_ft, cfg)
    else:
        spec = ExperimentSpec(
            tuple(scenarios),
            tuple(args.planner or PLANNERS),
            tuple(args.vehicles or (1, 2, 3, 4)),
            args.trials,
            base_seed=args.seed,
            depth_threshold=args.depth_threshold_ft if args.depth_threshold_ft is not None else 20.0,
            config=cfg,
        )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records = run_experiment(spec, out / RESULTS_FILE, workers=args.workers,
                             keep_trajectories=not args.no_trajectories)
    print(f"{len(records)} records in {out / RESULTS_FILE}")
    return 0


def cmd_report(args) -> int:
    results = Path(args.results) if args.results else Path(args.out) / RESULTS_FILE
    records = load_records(results)
    if not records and not results.exists():
        raise FileNotFoundError(f"{results}: no results file")
    coverage = None
    if args.scenario:
        coverage = full_coverage_times(load_scenario(args.scenario), (1, 2, 3, 4), _load_config(args.config))
    for p in report(aggregate(records), args.out, coverage):
        print(p)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="channelsearch", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate scenario files")
    g.add_argument("--out", required=True)
    g.add_argument("--suite", choices=("acceptance", "paper"), default="acceptance")
    g.add_argument("--shape", choices=SHAPES)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--rotation", type=float, default=15.0)
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("run", help="run one mission")
    r.add_argument("--scenario", required=True)
    r.add_argument("--planner", choices=PLANNERS, required=True)
    r.add_argument("--vehicles", type=int, default=1)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--depth-threshold-ft", type=float)
    r.add_argument("--timeout-s", type=float)
    r.add_argument("--config")
    r.add_argument("--out")
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("bench", help="run an experiment matrix")
    b.add_argument("--scenario", action="append", help="scenario file or directory (repeatable)")
    b.add_argument("--planner", action="append", choices=PLANNERS)
    b.add_argument("--vehicles", type=int, action="append")
    b.add_argument("--trials", type=int, default=5)
    b.add_argument("--paper", action="store_true", help="paper-shaped matrix (640 missions on 10 scenarios)")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--depth-threshold-ft", type=float)
    b.add_argument("--timeout-s", type=float)
    b.add_argument("--config")
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("--no-trajectories", action="store_true")
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_bench)

    p = sub.add_parser("report", help="aggregate results into tables")
    p.add_argument("--out", required=True)
    p.add_argument("--results", help=f"results file (default OUT/{RESULTS_FILE})")
    p.add_argument("--scenario", help="scenario for the full-coverage lawnmower line")
    p.add_argument("--config")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (OSError, ValueError, ScenarioError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
