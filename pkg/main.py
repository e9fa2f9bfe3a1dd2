"""
main.py: entry point for the orlicz-lab experiment runner.

Usage:
    orlicz-lab run --config configs/phase2.ini --out runs/phase2 [--threads N] [--seed S]
    orlicz-lab calibrate --records runs/phase2/records.csv
    orlicz-lab fit --records runs/phase2/records.csv --x k --y deviation [--n 32] [--param P]

Exit status 2 on any configuration or parameter error.
"""

import argparse
import json
import sys

from config import config
from errors import LabError
from harness import ExperimentConfig, read_records, recalibrate, run, scaling_fit
from logger import get_logger

log = get_logger("main")


# ── Subcommands ───────────────────────────────────────────────────────────────

def cmd_run(args: argparse.Namespace) -> int:
    config.update_from_args(threads=args.threads, seed=args.seed)
    cfg = ExperimentConfig.from_ini(args.config)
    result = run(cfg, out_dir=args.out, threads=config.threads)
    rates = result.summary["held_out_pass_rates"]
    print(f"\n── {cfg.scenario} ─────────────────────────────────")
    print(f"  Records    : {len(result.records)}")
    for env, mult in sorted(result.summary["multipliers"].items()):
        print(f"  {env:<22}: multiplier {mult:.4g}  held-out pass {rates.get(env, float('nan')):.3f}")
    print(f"  Output     : {args.out}")
    print("─" * 48 + "\n")
    return 0


def cmd_calibrate(args: argparse.Namespace) -> int:
    records = read_records(args.records)
    print(json.dumps(recalibrate(records), indent=2, sort_keys=True, default=repr))
    return 0


def cmd_fit(args: argparse.Namespace) -> int:
    records = read_records(args.records)
    if args.n is not None:
        records = [r for r in records if r.n == args.n]
    if args.k is not None:
        records = [r for r in records if r.k == args.k]
    if args.param is not None:
        records = [r for r in records if r.param == args.param]
    fit = scaling_fit(records, args.x, args.y)
    log.info(f"fit {args.y} vs {args.x}: slope={fit.slope:.4f} ± {fit.stderr:.4f}")
    print(json.dumps(fit.to_dict(), indent=2))
    return 0


# ── CLI parsing ───────────────────────────────────────────────────────────────

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="orlicz-lab", description="Weakly bounded empirical process experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario config")
    p_run.add_argument("--config", required=True, help="INI experiment config")
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument("--threads", type=int, default=None, help="worker processes (default ORLICZ_LAB_THREADS)")
    p_run.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_run.set_defaults(func=cmd_run)

    p_cal = sub.add_parser("calibrate", help="calibrate constants on stored records")
    p_cal.add_argument("--records", required=True)
    p_cal.set_defaults(func=cmd_calibrate)

    p_fit = sub.add_parser("fit", help="log-log scaling fit on stored records")
    p_fit.add_argument("--records", required=True)
    p_fit.add_argument("--x", default="k")
    p_fit.add_argument("--y", default="measured")
    p_fit.add_argument("--n", type=int, default=None, help="restrict to one dimension")
    p_fit.add_argument("--k", type=int, default=None, help="restrict to one sample size")
    p_fit.add_argument("--param", default=None, help="restrict to one record param")
    p_fit.set_defaults(func=cmd_fit)
    return parser


# ── Main entry ────────────────────────────────────────────────────────────────

def cli(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except LabError as e:
        log.error(f"{type(e).__name__}: {e}")
        return 2


if __name__ == "__main__":
    try:
        sys.exit(cli())
    except KeyboardInterrupt:
        print("\nInterrupted. Bye!")
