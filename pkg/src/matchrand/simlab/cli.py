"""Command-line entry point for the simulation lab.

Subcommands:
  grid        factorial simulation over covariate/prognosis settings
  case-study  fixed-trial Monte Carlo over randomization sequences
"""

from __future__ import annotations

import argparse
import json
import sys

from ..core import read_csv_records
from .gen import SimSetting, synthetic_trial, write_trial_csv
from .runner import case_study, run_grid


def _add_common(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--schemes", required=True,
                    help="comma-separated scheme tags, e.g. "
                         "mr,smr:20:E,smr:D:E,srr:D:E,cr,psr,dabcd")
    sp.add_argument("--mti", type=int, default=4,
                    help="maximum tolerable imbalance (default 4)")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default=None, help="output directory")
    sp.add_argument("--jobs", type=int, default=1,
                    help="worker processes (default 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="simlab",
        description="Monte Carlo lab for covariate-adaptive randomization")
    sub = parser.add_subparsers(dest="command", required=True)

    grid = sub.add_parser("grid", help="factorial simulation grid")
    grid.add_argument("--cd", required=True, choices=["CD1", "CD2", "CD3"],
                      help="distribution of the second covariate")
    grid.add_argument("--cp", required=True,
                      choices=["CP1", "CP2", "CP3", "CP4"],
                      help="prognostic strength of the two covariates")
    grid.add_argument("--n", type=int, required=True, help="sample size")
    grid.add_argument("--reps", type=int, default=2000,
                      help="replicates (default 2000)")
    _add_common(grid)

    case = sub.add_parser("case-study",
                          help="fixed-trial sequence Monte Carlo")
    case.add_argument("--data", required=True,
                      help="enrollment CSV (id, batch, covariates, y0) or "
                           "'synthetic' for the bundled 512-row trial")
    case.add_argument("--priority", default=None,
                      help="comma-separated covariates used for matching")
    case.add_argument("--sequences", type=int, default=2000,
                      help="sequences per scheme (default 2000)")
    case.add_argument("--delta", type=float, action="append", default=None,
                      help="sharp effect(s); repeatable (default 0 and -0.5)")
    _add_common(case)

    gen = sub.add_parser("gen-trial", help="write the bundled synthetic trial")
    gen.add_argument("--out", required=True, help="CSV path")
    gen.add_argument("--seed", type=int, default=20260823)
    gen.add_argument("--n", type=int, default=512)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "grid":
        setting = SimSetting(cd=args.cd, cp=args.cp, n=args.n,
                             replicates=args.reps,
                             schemes=tuple(args.schemes.split(",")),
                             mti=args.mti, seed=args.seed)
        summaries = run_grid(setting, parallelism=args.jobs,
                             out_dir=args.out)
        for tag, s in summaries.items():
            print(f"{tag}: estimator_sd={s.estimator_sd:.4f} "
                  f"mean_sum_distances={s.mean_sum_distances:.4f} "
                  f"mean_abs_smd={[round(float(v), 4) for v in s.mean_abs_smd]}")
        return 0
    if args.command == "case-study":
        if args.data == "synthetic":
            records, schema = synthetic_trial()
        else:
            records, schema = read_csv_records(args.data), None
        deltas = args.delta if args.delta else [0.0, -0.5]
        priority = args.priority.split(",") if args.priority else None
        results = case_study(records, args.schemes.split(","),
                             priority=priority, deltas=deltas,
                             M=args.sequences, seed=args.seed, mti=args.mti,
                             parallelism=args.jobs, out_dir=args.out,
                             schema=schema)
        print(json.dumps(results, indent=2, default=str))
        return 0
    if args.command == "gen-trial":
        records, _ = synthetic_trial(seed=args.seed, n=args.n)
        write_trial_csv(records, args.out)
        print(f"wrote {len(records)} rows to {args.out}")
        return 0
    return 1


if __name__ == "__main__":
    sys.exit(main())
