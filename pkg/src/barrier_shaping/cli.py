"""Command-line entry point.

Subcommands::

    barrier-shaping run <config.yaml> [--seed N] [--out DIR] [--variant V]
    barrier-shaping grid <config.yaml> <grid.yaml> [--seed N] [--out DIR] [--variant V]
    barrier-shaping eval <checkpoint> [--seed N] [--episodes K]
    barrier-shaping sweep-angles <checkpoint> [--out FILE] [--angles-deg A ...]

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

from . import __version__, harness
from .errors import BarrierShapingError, ConfigurationError
from .td3 import evaluate

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _overrides(args) -> dict:
    return {"seed": args.seed, "out": args.out, "variant": args.variant}


def cmd_run(args) -> int:
    config = harness.load_config(args.config).with_overrides(**_overrides(args))
    result = harness.run_experiment(config)
    print(json.dumps(result.summary, indent=2, sort_keys=True))
    print(f"results written to {result.out_dir}", file=sys.stderr)
    return EXIT_OK


def cmd_grid(args) -> int:
    config = harness.load_config(args.config).with_overrides(**_overrides(args))
    grid = harness.load_grid(args.grid)
    result = harness.grid_search(config, grid, out_dir=config.output_dir)
    for row in result.table:
        print(f"{row['rank']:>3}  delta_a={row['delta_a']:<8g} delta_b={row['delta_b']!s:<8} "
              f"gain={row['barrier_gain']:<6g} {grid.metric}={row['metric']:.6g}")
    print(f"best config written to {Path(config.output_dir) / 'best_config.yaml'}", file=sys.stderr)
    return EXIT_OK


def cmd_eval(args) -> int:
    agent, config, variant = harness.load_policy(args.checkpoint)
    cfg = config.td3_config()
    episodes = args.episodes if args.episodes is not None else cfg.eval_episodes
    seed = args.seed if args.seed is not None else cfg.eval_seed
    res = evaluate(agent, config.make_env(variant), episodes, seed)
    print(json.dumps({"variant": variant, "episodes": episodes, "seed": seed,
                      "mean_vanilla_return": res.mean_vanilla_return, "mean_shaped_return": res.mean_return,
                      "mean_energy_signed": res.mean_energy_signed,
                      "mean_energy_unsigned": res.mean_energy_unsigned}, indent=2))
    return EXIT_OK


def cmd_sweep(args) -> int:
    agent, config, variant = harness.load_policy(args.checkpoint)
    if args.angles_deg:
        data = config.model_dump(mode="json")
        data["stabilization"]["angles"] = [math.radians(a) for a in args.angles_deg]
        config = harness.parse_config(data)
    if args.seed is not None:
        data = config.model_dump(mode="json")
        data["stabilization"]["seed"] = args.seed
        config = harness.parse_config(data)
    rows = [harness.sweep_row(variant, agent.seed, r) for r in harness.sweep_policy(config, variant, agent.policy)]
    if args.out:
        harness.write_csv(args.out, harness.SWEEP_COLUMNS, rows)
    else:
        print(",".join(harness.SWEEP_COLUMNS))
        for r in rows:
            print(",".join(harness._fmt(r[c]) for c in harness.SWEEP_COLUMNS))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="barrier-shaping", description="Barrier-function reward shaping experiments.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, help="run only this seed")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--variant", choices=harness.VARIANTS, help="run only this reward variant")

    sp = sub.add_parser("run", help="train and evaluate every variant x seed of a config")
    sp.add_argument("config")
    common(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("grid", help="grid search over barrier parameters")
    sp.add_argument("config")
    sp.add_argument("grid")
    common(sp)
    sp.set_defaults(func=cmd_grid)

    sp = sub.add_parser("eval", help="evaluate a trained checkpoint")
    sp.add_argument("checkpoint")
    sp.add_argument("--seed", type=int, help="first evaluation reset seed")
    sp.add_argument("--episodes", type=int)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("sweep-angles", help="stabilization-energy sweep of a trained checkpoint")
    sp.add_argument("checkpoint")
    sp.add_argument("--seed", type=int, help="reset seed shared by all start angles")
    sp.add_argument("--out", help="CSV file to write (default: stdout)")
    sp.add_argument("--angles-deg", type=float, nargs="+", help="start angles in degrees")
    sp.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (BarrierShapingError, OSError, ArithmeticError, ValueError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
