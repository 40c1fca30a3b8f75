"""
Command line: ``fediod run <config> [--output-dir DIR] [--seed-override N]``
and ``fediod modes``.

Exit codes: 0 success, 1 run failure, 2 configuration error.
Log level comes from FEDIOD_LOG_LEVEL (default INFO); every run also logs
to run.log inside its output directory.
"""

import argparse
import logging
import os
import sys

from .config import parse_config
from .errors import ConfigError
from .version import PACKAGE_VERSION

logger = logging.getLogger("fediod")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2

LOG_ENV = "FEDIOD_LOG_LEVEL"
LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"


def _configure_logging(log_dir: str = None):
    level_name = os.environ.get(LOG_ENV, "INFO").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.INFO
    handlers = [logging.StreamHandler(sys.stderr)]
    if log_dir:
        os.makedirs(log_dir, exist_ok=True)
        handlers.append(logging.FileHandler(
            os.path.join(log_dir, "run.log"), mode="w", encoding="utf-8"))
    logging.basicConfig(level=level, format=LOG_FORMAT, handlers=handlers,
                        force=True)
    if level_name != logging.getLevelName(level):
        logger.warning("Unknown %s=%s, using INFO", LOG_ENV, level_name)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fediod", description="FedIOD federated distillation simulator")
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {PACKAGE_VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run an experiment from a config file")
    run.add_argument("config", help="YAML (or JSON) run configuration")
    run.add_argument("--output-dir", default=None,
                     help="Override output_dir from the config")
    run.add_argument("--seed-override", type=int, default=None,
                     help="Run this single seed instead of the config's seeds")

    sub.add_parser("modes", help="List the available run modes")
    return parser


def _cmd_modes() -> int:
    from .modes import discover_modes

    for cls in sorted(discover_modes(), key=lambda c: c.name):
        print(f"{cls.name:<12} {cls.description}")
    return EXIT_OK


def _cmd_run(args) -> int:
    try:
        cfg = parse_config(args.config).with_overrides(
            args.output_dir, args.seed_override)
    except ConfigError as e:
        _configure_logging()
        logger.error("Configuration error: %s", e)
        return EXIT_CONFIG

    _configure_logging(cfg.output_dir)
    from .runner import ExperimentRunner

    result = ExperimentRunner(cfg).run()
    if result["success"]:
        report = result["report"]
        print(f"{cfg.mode}: {report.final_mean:.4f} +- {report.final_std:.4f} "
              f"over {len(report.seeds)} seed(s) -> {result['paths']['report']}")
        return EXIT_OK
    logger.error("Run failed: %s", result["error"])
    if result.get("error_type") == "ConfigError":
        return EXIT_CONFIG
    return EXIT_FAILURE


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "modes":
        _configure_logging()
        return _cmd_modes()
    return _cmd_run(args)
