"""Command-line front end: run experiments, compare them, validate scenarios.

Subcommands:
    run       execute one controller mode over a scenario and seed list
    compare   paired improvement statistics between two run directories
    validate  load and check a scenario file without running anything

A scenario argument is either a JSON file path or the name of a bundled
reference scenario.  Every error exits nonzero with a diagnostic on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import List, Optional

from .harness import (
    ExperimentConfig,
    compare_reports,
    load_experiment_dir,
    run_experiment,
)
from .network import NetworkSpec, validate_network
from .scenarios import REFERENCE_BUILDERS


def _resolve_scenario(arg: str) -> NetworkSpec:
    if arg in REFERENCE_BUILDERS:
        return REFERENCE_BUILDERS[arg]()
    return NetworkSpec.from_json(arg)


def _parse_seeds(text: str) -> List[int]:
    try:
        seeds = [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"seeds must be comma-separated integers, got {text!r}")
    if not seeds:
        raise argparse.ArgumentTypeError("need at least one seed")
    return seeds


def _cmd_run(args: argparse.Namespace) -> int:
    spec = _resolve_scenario(args.scenario)
    label = args.label or (args.scenario
                           if args.scenario in REFERENCE_BUILDERS else "")
    cfg = ExperimentConfig(
        scenario=spec, mode=args.mode, seeds=args.seeds,
        duration=args.duration, warmup=args.warmup, out_dir=args.out,
        force_uniform=args.force_uniform, label=label, jobs=args.jobs)
    reports = run_experiment(cfg)
    for r in reports:
        print(f"seed {r.seed}: n_vehicles={r.n_vehicles} "
              f"mean_delay={r.mean_delay:.4f} std_delay={r.std_delay:.4f}")
    means = [r.mean_delay for r in reports]
    print(f"{args.mode} over {len(reports)} seed(s): "
          f"mean_delay={sum(means) / len(means):.4f}")
    if args.out:
        print(f"wrote {args.out}")
    return 0


def _cmd_compare(args: argparse.Namespace) -> int:
    a = load_experiment_dir(args.a)
    b = load_experiment_dir(args.b)
    summary = compare_reports(a, b)
    text = json.dumps(summary.to_dict(), sort_keys=True, indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    print(text)
    return 0


def _cmd_validate(args: argparse.Namespace) -> int:
    spec = _resolve_scenario(args.scenario)
    net = validate_network(spec)
    n_demand = len(spec.demand)
    print(f"scenario ok: {len(net.intersections)} intersections, "
          f"{len(net.links)} links, {n_demand} demand profile(s)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stopline",
        description="Decentralized traffic-signal control experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one controller mode over seeds")
    run_p.add_argument("--scenario", required=True,
                       help="scenario JSON path or one of: "
                            + ", ".join(sorted(REFERENCE_BUILDERS)))
    run_p.add_argument("--mode", required=True,
                       choices=("fixed_time", "baseline", "local_queue",
                                "composite"))
    run_p.add_argument("--seeds", required=True, type=_parse_seeds,
                       help="comma-separated integers, e.g. 1,2,3")
    run_p.add_argument("--duration", required=True, type=float,
                       help="simulated seconds")
    run_p.add_argument("--out", default=None,
                       help="directory for per-seed run folders")
    run_p.add_argument("--warmup", type=float, default=300.0,
                       help="seconds excluded from statistics (default 300)")
    run_p.add_argument("--force-uniform", action="store_true",
                       help="pin scheduler weights to 1.0 in adaptive modes")
    run_p.add_argument("--label", default="",
                       help="scenario name recorded in reports")
    run_p.add_argument("--jobs", type=int, default=1,
                       help="worker processes across seeds (default 1)")
    run_p.set_defaults(func=_cmd_run)

    cmp_p = sub.add_parser("compare",
                           help="improvement of run B relative to run A")
    cmp_p.add_argument("--a", required=True, help="reference run directory")
    cmp_p.add_argument("--b", required=True, help="candidate run directory")
    cmp_p.add_argument("--out", default=None,
                       help="also write the JSON summary here")
    cmp_p.set_defaults(func=_cmd_compare)

    val_p = sub.add_parser("validate", help="check a scenario file")
    val_p.add_argument("--scenario", required=True,
                       help="scenario JSON path or reference name")
    val_p.set_defaults(func=_cmd_validate)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
