import argparse
import logging
import sys
from typing import List, Optional

from . import __version__
from .cli_report import cmd_stats, cmd_sweep, cmd_verify
from .config import Config
from .dataset_io import Finding
from .exceptions import (
    EXIT_CHECK_FAILED,
    EXIT_IO,
    EXIT_OK,
    ConfigError,
    DatasetValidationError,
    TinyFusionError,
)
from .verification import DEFAULT_INSTANCES, DEFAULT_SEED


def setup_logging(level: str = "INFO", log_file: Optional[str] = None):
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if log_file:
        handlers.append(logging.FileHandler(log_file))
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=handlers,
        force=True,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tinyfusion",
        description="Statistic-based FPN fusion factors and FPN fusion checks",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    parser.add_argument("--log-file", help="also write logs to this file")

    commands = parser.add_subparsers(dest="command", required=True)

    stats = commands.add_parser("stats", help="count objects per pyramid level and compute alpha")
    stats.add_argument("--annotations", required=True, help="annotation JSON file")
    stats.add_argument("--config", help="anchor/statistics config (.toml or .json)")
    stats.add_argument("--max-objects", type=int, default=None,
                       help="keep images with fewer objects than this (default 200)")
    stats.add_argument("--out", required=True, help="stats report path")
    stats.add_argument("--alpha-out", help="also write a standalone alpha.json")
    stats.add_argument("--image-scale", type=float, default=1.0,
                       help="rescale images and boxes before counting")

    verify = commands.add_parser("verify", help="check FPN fusion identities numerically")
    verify.add_argument("--seed", type=int, default=DEFAULT_SEED)
    verify.add_argument("--instances", type=int, default=DEFAULT_INSTANCES,
                        help="random instances per check")
    verify.add_argument("--out", required=True, help="verify report path")

    sweep = commands.add_parser("sweep", help="write one run config per uniform alpha")
    sweep.add_argument("--min", type=float, required=True, dest="min_alpha")
    sweep.add_argument("--max", type=float, required=True, dest="max_alpha")
    sweep.add_argument("--step", type=float, required=True)
    sweep.add_argument("--base-config", help="config copied into every run config")
    sweep.add_argument("--out-dir", required=True)

    return parser


def _print_findings(findings: List[Finding]):
    for finding in findings:
        print(str(finding), file=sys.stderr)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)

    level = "DEBUG" if args.verbose else "WARNING" if args.quiet else "INFO"
    setup_logging(level, args.log_file)
    logger = logging.getLogger(__name__)

    try:
        if args.command == "stats":
            if args.max_objects is not None and args.max_objects < 1:
                raise ConfigError(f"--max-objects must be >= 1, got {args.max_objects}")
            if not args.image_scale > 0:
                raise ConfigError(f"--image-scale must be positive, got {args.image_scale}")
            config = Config(args.config) if args.config else Config()
            # command-line verbosity flags win over the [logging] section
            if not (args.verbose or args.quiet):
                level = config.log_level
            setup_logging(level, args.log_file or config.log_file)
            cmd_stats(args.annotations, args.config, args.max_objects, args.out,
                      alpha_out=args.alpha_out, image_scale=args.image_scale, config=config)
        elif args.command == "verify":
            report = cmd_verify(args.seed, args.out, args.instances)
            if not report.passed:
                for check in report.failures:
                    print(f"failed: {check.to_dict()}", file=sys.stderr)
                return EXIT_CHECK_FAILED
        elif args.command == "sweep":
            cmd_sweep(args.min_alpha, args.max_alpha, args.step, args.base_config, args.out_dir)
        return EXIT_OK

    except DatasetValidationError as e:
        print(f"Error: {e}", file=sys.stderr)
        _print_findings(e.findings)
        return e.exit_code
    except TinyFusionError as e:
        print(f"Error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_IO
    except Exception as e:
        logger.exception(f"Unexpected error: {e}")
        return EXIT_CHECK_FAILED


if __name__ == "__main__":
    sys.exit(main())
