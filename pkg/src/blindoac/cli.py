"""Command-line entry point.

Subcommands map one-to-one onto the experiment runners:

    blindoac sweep-nmse       --config cfg.json --out outdir [--seed S] [--threads T]
    blindoac feel             --config cfg.json --out outdir [--seed S] [--threads T]
    blindoac calibrate-lambda --config cfg.json --out outdir [--seed S] [--threads T]
    blindoac oracle-check     --config cfg.json --out outdir [--seed S] [--threads T]

Exit codes: 0 success, 2 completed with flagged cells, 1 fatal error.
"""

import argparse
import sys

from .errors import BlindOacError
from .experiments import RUNNERS, load_config

_SUBCOMMAND_KINDS = {
    "sweep-nmse": ("nmse_vs_snr_L", "nmse_vs_snr_K"),
    "feel": ("feel_benchmark",),
    "calibrate-lambda": ("lambda_calibration",),
    "oracle-check": ("solver_oracle_check",),
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="blindoac",
        description="Blind asynchronous over-the-air aggregation experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, kinds in _SUBCOMMAND_KINDS.items():
        p = sub.add_parser(name, help=f"run a config of kind {' or '.join(kinds)}")
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config's master seed (u64)")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads for independent cells")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config, seed_override=args.seed)
        expected = _SUBCOMMAND_KINDS[args.command]
        if config.kind not in expected:
            raise BlindOacError(
                f"subcommand {args.command!r} expects kind in {expected}, "
                f"config has {config.kind!r}"
            )
        if args.threads < 1:
            raise BlindOacError(f"--threads must be >= 1, got {args.threads}")
        runner = RUNNERS[config.kind]
        table = runner(config, args.out, threads=args.threads,
                       log=lambda msg: print(msg, flush=True))
    except BlindOacError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if table.any_flagged():
        print("completed with flagged cells", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
