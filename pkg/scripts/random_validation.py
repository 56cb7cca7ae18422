"""Structural identity study over seeded random plants.

Draws stabilizable-and-observable plants, builds the observer
parameterization and its ancillary system for each, and reports the
worst residual of every model-side identity across all trials.
"""

import argparse
import sys

from oflqr import cli


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--trials", type=int, default=200)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--order", type=int, default=4, help="state dimension")
    parser.add_argument("--inputs", type=int, default=1)
    parser.add_argument("--output-root", default="runs")
    args = parser.parse_args(argv)

    cfg = cli.normalize_config({
        "random": {
            "seed": args.seed,
            "order": args.order,
            "inputs": args.inputs,
            "trials": args.trials,
        },
        "cost": {
            "Qy": [[1.0]],
            "R": [[float(v == w) for w in range(args.inputs)] for v in range(args.inputs)],
        },
        "algorithm": {"name": "oracle-only"},
        "output": {"directory": f"random_validation_seed{args.seed}"},
    })
    report = cli.verify_config(cfg, output_root=args.output_root)
    return 0 if report.ok else 1


if __name__ == "__main__":
    sys.exit(main())
