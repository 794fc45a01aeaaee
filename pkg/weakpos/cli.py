"""Command-line entry point"""

import argparse
import logging
import sys
from typing import List, Optional

from weakpos.error import ErrorKind, WeakPosError
from weakpos.experiment import (
    cmd_collect,
    cmd_eval,
    cmd_sweep,
    cmd_train,
    load_config,
    preset_names,
)

logger = logging.getLogger(__name__)

COMMANDS = ("collect", "train", "eval", "sweep")
DATASET_HELP = "dataset file, <out>/dataset.jsonl by default"


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with one subcommand per pipeline stage"""
    parser = argparse.ArgumentParser(
        prog="weakpos",
        description="Weakly-supervised positioning from distance constraints",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment configuration")
    common.add_argument(
        "--preset", help=f"bundled configuration ({', '.join(preset_names())})"
    )
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument(
        "--seed-override",
        action="append",
        default=[],
        metavar="NAME=VALUE",
        help="replace one named seed, repeatable",
    )
    common.add_argument(
        "--log-level",
        default="INFO",
        choices=("DEBUG", "INFO", "WARNING", "ERROR"),
    )
    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("collect", parents=[common], help="collect a dataset")
    train = commands.add_parser("train", parents=[common], help="train a method")
    train.add_argument("--dataset", help=DATASET_HELP)
    train.add_argument(
        "--resume", action="store_true", help="continue from <out>/checkpoint.bin"
    )
    evaluate = commands.add_parser("eval", parents=[common], help="evaluate a method")
    evaluate.add_argument("--dataset", help=DATASET_HELP)
    commands.add_parser("sweep", parents=[common], help="run a robustness sweep")
    return parser


def run(args: argparse.Namespace) -> None:
    """Execute a parsed command"""
    if args.config is None and args.preset is None:
        raise WeakPosError(ErrorKind.INVALID_CONFIG, "Pass --config or --preset")
    cfg = load_config(args.config, args.preset, args.seed_override)
    if args.command == "collect":
        cmd_collect(cfg, args.out)
    elif args.command == "train":
        cmd_train(cfg, args.out, args.dataset, args.resume)
    elif args.command == "eval":
        cmd_eval(cfg, args.out, args.dataset)
    else:
        cmd_sweep(cfg, args.out)


def main(argv: Optional[List[str]] = None) -> int:
    """
    Run the CLI

    Returns:
        0 on success, 1 after printing a JSON error record on stderr
    """
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=args.log_level,
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        run(args)
    except WeakPosError as err:
        logger.debug("Command failed", exc_info=True)
        print(err.to_record(), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
