import argparse
import logging
import sys
from typing import List, Optional

from dotenv import load_dotenv

# Environment defaults in app.config are read at import
load_dotenv()

from app.command_runner import COMMANDS, run_command  # noqa: E402
from app.config import LOG_LEVEL, REFERENCE_DEVICE_FILE  # noqa: E402
from app.config_parser import load_config  # noqa: E402
from app.data_types import (  # noqa: E402
    ConfigError,
    MaterialsError,
    SimulationError,
    SpecValidationError,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INVALID = 2
EXIT_SOLVER = 3


class _Parser(argparse.ArgumentParser):
    """Argument parser whose usage errors exit with code 1."""

    def error(self, message: str) -> None:
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="heterosim",
        description="Field-plated AlGaN/GaN HEMT simulator.",
    )
    parser.add_argument("command", help=f"one of: {', '.join(COMMANDS)}")
    parser.add_argument(
        "--config",
        default=str(REFERENCE_DEVICE_FILE),
        help="run configuration file (default: the shipped reference device)",
    )
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--workers", type=int, default=None, help="parallel workers")
    parser.add_argument(
        "--refinement", choices=("coarse", "normal", "fine"), default=None, help="mesh level"
    )
    parser.add_argument("--log-level", default=LOG_LEVEL, help="logging level")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Entry point of the command-line interface.

    Returns:
        0 on success, 1 on usage errors, 2 on invalid input, 3 when a solver fails.
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=args.log_level.upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    if args.command not in COMMANDS:
        parser.print_usage(sys.stderr)
        print(
            f"heterosim: unknown command '{args.command}' (choose from {', '.join(COMMANDS)})",
            file=sys.stderr,
        )
        return EXIT_USAGE
    if args.workers is not None and args.workers < 1:
        parser.print_usage(sys.stderr)
        print("heterosim: --workers must be >= 1", file=sys.stderr)
        return EXIT_USAGE

    try:
        config = load_config(args.config)
        report = run_command(
            config,
            args.command,
            output_dir=args.out,
            workers=args.workers,
            refinement=args.refinement,
        )
    except (ConfigError, SpecValidationError, MaterialsError) as e:
        logger.error("Invalid input: %s", e)
        return EXIT_INVALID
    except SimulationError as e:
        logger.error("Solver failure: %s", e)
        return EXIT_SOLVER

    logger.info("Wrote %d files", len(report.files))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
