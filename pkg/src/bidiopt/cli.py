"""Command-line front end for the experiment harness."""

from __future__ import annotations

import argparse
import os
import sys

from .algorithms import ALGORITHMS
from .harness import ExperimentConfig, run_experiment, toy_dataset_path


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bidiopt",
        description="Run server/worker compressed-optimization experiments "
                    "and emit per-round trace CSVs, a manifest and an SVG plot.",
    )
    parser.add_argument("--algo", required=True, choices=ALGORITHMS)
    parser.add_argument("--problem", default="quadratic", choices=("quadratic", "logreg"))
    parser.add_argument("--dataset", default="toy",
                        help="LIBSVM text or binary-cache path; 'toy' = bundled 1000-sample set")
    parser.add_argument("--n", type=int, default=4, help="worker count")
    parser.add_argument("--kw", type=int, default=0, help="uplink coordinate budget (0 = dim//3)")
    parser.add_argument("--ka", type=int, default=0, help="downlink coordinate budget (0 = dim//3)")
    parser.add_argument("--r", type=float, default=0.5, help="downlink weight in [0, 1]")
    parser.add_argument("--mode", default="tuned", choices=("theory", "tuned"))
    parser.add_argument("--grid-lo", type=int, default=0)
    parser.add_argument("--grid-hi", type=int, default=0)
    parser.add_argument("--rounds", type=int, default=None)
    parser.add_argument("--budget-coords", type=float, default=None)
    parser.add_argument("--eps", type=float, default=None)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", required=True, help="output directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.problem == "logreg":
        path = toy_dataset_path() if args.dataset == "toy" else args.dataset
        if not os.path.isfile(path):
            print(f"error: dataset not readable: {path}", file=sys.stderr)
            return 2
    rounds = args.rounds
    if rounds is None and args.budget_coords is None and args.eps is None:
        rounds = 200
    try:
        config = ExperimentConfig(
            algo=args.algo, out=args.out, problem=args.problem, dataset=args.dataset,
            n=args.n, kw=args.kw, ka=args.ka, r=args.r, mode=args.mode,
            grid_lo=args.grid_lo, grid_hi=args.grid_hi, rounds=rounds,
            budget_coords=args.budget_coords, eps=args.eps, seed=args.seed,
        )
        result = run_experiment(config)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {len(result['traces'])} trace(s) and {result['manifest']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
