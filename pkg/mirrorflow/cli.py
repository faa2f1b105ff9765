"""
mirrorflow command line
Validate configurations and run experiments; exit codes 0 ok, 1 certificate failure,
2 config error, 3 solver error.
"""

import argparse
import logging
import os
import sys
import traceback
from pathlib import Path
from typing import List, Optional

from . import __version__
from .config import ExperimentConfig, preset_path, validate_config
from .errors import ConfigError, SolverError

EXIT_OK = 0
EXIT_CERTIFICATE = 1
EXIT_CONFIG = 2
EXIT_SOLVER = 3


def setup_logging(config: ExperimentConfig, out_dir: Optional[Path] = None):
    """Setup logging configuration"""
    # MIRRORFLOW_LOG_LEVEL overrides the config
    log_level_str = os.getenv("MIRRORFLOW_LOG_LEVEL", config.get("logging.level", "INFO")).upper()
    log_level = getattr(logging, log_level_str, logging.INFO)

    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stdout)]
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        handlers.insert(0, logging.FileHandler(out_dir / config.get("logging.file", "run.log")))

    logging.basicConfig(
        level=log_level,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=handlers,
        force=True,
    )


def check_dependencies() -> bool:
    """Check if all required dependencies are available"""
    missing_deps = []
    try:
        import numpy  # noqa: F401
    except ImportError:
        missing_deps.append("numpy")
    try:
        import scipy  # noqa: F401
    except ImportError:
        missing_deps.append("scipy")

    if missing_deps:
        print("❌ Missing required dependencies:")
        for dep in missing_deps:
            print(f"   - {dep}")
        print("\nInstall them with uv:")
        print("   uv sync")
        return False
    return True


def resolve_config_path(value: str) -> Path:
    """A file path, or the name of a bundled preset"""
    path = Path(value)
    if path.exists():
        return path
    return preset_path(value)


def _print_errors(errors: List[str]):
    print("❌ Invalid configuration:")
    for error in errors:
        print(f"   - {error}")


def cmd_validate(args: argparse.Namespace) -> int:
    try:
        config = validate_config(resolve_config_path(args.config))
    except ConfigError as e:
        _print_errors(e.errors)
        return EXIT_CONFIG
    print(f"✅ {config.source} is valid")
    if args.show:
        print(config.to_text(), end="")
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    from .core.experiment import run_experiment

    try:
        config = validate_config(resolve_config_path(args.config))
        if args.seed is not None:
            if args.seed < 0 or args.seed >= 2 ** 64:
                raise ConfigError([f"--seed: expected an unsigned 64-bit integer, got {args.seed}"])
            config.set("flow.seed", args.seed)
    except ConfigError as e:
        _print_errors(e.errors)
        return EXIT_CONFIG

    out_dir = Path(args.out or config.get("output.dir"))
    config.set("output.dir", str(out_dir))
    setup_logging(config, out_dir)
    logger = logging.getLogger(__name__)

    print(f"🚀 Running {config.source} -> {out_dir}")
    try:
        result = run_experiment(config, out_dir)
    except SolverError as e:
        logger.error(f"Solver error in stage '{e.stage}': {e}")
        logger.debug(traceback.format_exc())
        print(f"❌ Solver error in stage '{e.stage}': {e}")
        return EXIT_SOLVER

    for report in result.certificates:
        print(f"   {'✅' if report.passed else '❌'} {report.certificate}")
    if not result.passed:
        print(f"❌ Certificates failed: {', '.join(result.failed())}")
        return EXIT_CERTIFICATE
    print(f"✅ All certificates pass; artifacts in {out_dir}")
    return EXIT_OK


def cmd_version(args: argparse.Namespace) -> int:
    print(f"mirrorflow {__version__}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mirrorflow",
        description="Mirror-descent flows for stochastic control with certified convergence",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="Run an experiment and write its artifacts")
    run.add_argument("--config", required=True, help="Configuration file or preset name")
    run.add_argument("--out", help="Output directory (overrides output.dir)")
    run.add_argument("--seed", type=int, help="Seed (overrides flow.seed)")
    run.set_defaults(handler=cmd_run)

    validate = commands.add_parser("validate", help="Check a configuration file")
    validate.add_argument("--config", required=True, help="Configuration file or preset name")
    validate.add_argument("--show", action="store_true", help="Print the normalized configuration")
    validate.set_defaults(handler=cmd_validate)

    version = commands.add_parser("version", help="Print the version")
    version.set_defaults(handler=cmd_version)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main application entry point"""
    args = build_parser().parse_args(argv)
    if args.command == "run" and not check_dependencies():
        return EXIT_SOLVER
    try:
        return args.handler(args)
    except KeyboardInterrupt:
        print("\n👋 Interrupted")
        return EXIT_SOLVER
    except Exception as e:
        logging.getLogger(__name__).error(f"Unexpected error: {e}")
        logging.getLogger(__name__).error(traceback.format_exc())
        print(f"❌ Unexpected error: {e}")
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
