"""
Command-line entry point: ``uav-mec simulate | train | sweep``.
"""

import argparse
import logging
import sys
from typing import List, Optional

import attrs

from . import __version__
from .exceptions import (
    CheckpointError,
    ConfigError,
    DivergenceError,
    NumericalError,
    UavMecError,
)
from .experiments import (
    load_plan_file,
    load_run_config,
    plan_config,
    simulate_command,
    summary_table,
    sweep_command,
    train_command,
)
from .policies import SCHEMES

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uav-mec",
        description="UAV-assisted mobile edge computing simulator and DRQN trainer.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="Log at DEBUG level")
    parser.add_argument(
        "--progress", action="store_true", help="Show progress bars on the terminal"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="Run one scheme at one arrival probability")
    sim.add_argument("--config", help="Config file (defaults apply when omitted)")
    sim.add_argument("--scheme", required=True, choices=SCHEMES)
    sim.add_argument(
        "--lambda",
        dest="arrival_prob",
        type=float,
        default=None,
        help="Task arrival probability; overrides the config",
    )
    sim.add_argument("--seed", type=int, default=0, help="Run seed under the master seed")
    sim.add_argument("--epochs", type=int, default=100000)
    sim.add_argument("--warmup", type=int, default=None, help="Default: 10%% of --epochs")
    sim.add_argument("--checkpoint", help="DRQN checkpoint; may contain {arrival_prob}")
    sim.add_argument("--trace", action="store_true", help="Write per-user trace.csv")
    sim.add_argument("--trajectory", action="store_true", help="Write trajectory.csv")
    sim.add_argument("--out", required=True, help="Output directory")

    train = sub.add_parser("train", help="Train the shared DRQN in the digital twin")
    train.add_argument("--config", help="Config file (defaults apply when omitted)")
    train.add_argument("--resume", help="Checkpoint to continue from")
    train.add_argument("--out", required=True, help="Output directory")

    sweep = sub.add_parser("sweep", help="Run every (scheme, arrival probability, seed)")
    sweep.add_argument("--plan", required=True, help="Plan file")
    sweep.add_argument("--config", help="Config file overriding the plan's")
    sweep.add_argument("--out", required=True, help="Output directory")
    return parser


def _simulate(args: argparse.Namespace) -> int:
    cfg = load_run_config(args.config)
    if args.arrival_prob is not None:
        try:
            cfg = attrs.evolve(cfg, arrival_prob=args.arrival_prob)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"invalid --lambda: {e}") from e
    row = simulate_command(
        cfg,
        args.scheme,
        args.seed,
        args.epochs,
        args.out,
        warmup_epochs=args.warmup,
        checkpoint=args.checkpoint,
        trace=args.trace,
        trajectory=args.trajectory,
        progress=args.progress,
    )
    print(
        f"{row.scheme} λ={row.arrival_prob} seed={row.seed}: "
        f"mean utility {row.mean_utility:.6f}"
    )
    return EXIT_OK


def _train(args: argparse.Namespace) -> int:
    cfg = load_run_config(args.config)
    path = train_command(cfg, args.out, resume=args.resume, progress=args.progress)
    print(f"Checkpoint written to {path}")
    return EXIT_OK


def _sweep(args: argparse.Namespace) -> int:
    plan = load_plan_file(args.plan)
    cfg = plan_config(plan, args.config)
    results = sweep_command(plan, cfg, args.out, progress=args.progress)
    for scheme, by_lambda in summary_table(results).items():
        cells = "  ".join(f"{p:g}:{u:.4f}" for p, u in by_lambda.items())
        print(f"{scheme:>7}  {cells}")
    return EXIT_OK


COMMANDS = {"simulate": _simulate, "train": _train, "sweep": _sweep}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, CheckpointError) as e:
        logger.error("%s", e)
        return EXIT_CONFIG
    except (DivergenceError, NumericalError) as e:
        logger.error("%s", e)
        return EXIT_DIVERGED
    except UavMecError as e:
        logger.error("%s", e)
        return 1


if __name__ == "__main__":
    sys.exit(main())
