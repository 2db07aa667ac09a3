"""
Command-line entry point.

    python cli/main.py <simulate|label|train|generate|couple|analyze|all> \
        [--config run.json] [--set section.field=value ...] [--threads N] \
        [--output-root DIR] [--mkdir]

Exit codes: 0 success, 2 validation failure, 3 runtime failure.
"""

import argparse
import os
import sys
from typing import List, Optional

# Add parent directory to path for imports
sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), ".."))

from cli.commands import PIPELINE_ORDER, STAGES, Stage
from cli.pipeline_config import PipelineConfig
from shared.config import Config, LogConfig
from shared.errors import ConfigValidationError, InputError, StaleArtifactError

logger = LogConfig.setup_logging("cli")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3

VALIDATION_ERRORS = (ConfigValidationError, StaleArtifactError, InputError, FileNotFoundError)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sgmus",
        description="Score-model-initialized umbrella sampling of fast/slow SDEs",
    )
    parser.add_argument("command", choices=PIPELINE_ORDER + ["all"], help="Pipeline stage to run")
    parser.add_argument("--config", default=None, help="JSON pipeline config (defaults apply when omitted)")
    parser.add_argument("--set", action="append", default=[], metavar="PATH=VALUE",
                        help="Override a config field by dot-path, e.g. couple.kappa=20")
    parser.add_argument("--threads", type=int, default=None, help="Cap on worker threads")
    parser.add_argument("--output-root", default=None,
                        help="Root for relative output_dir values (default: $SGMUS_OUTPUT_ROOT)")
    parser.add_argument("--mkdir", action="store_true", help="Create the output directory if missing")
    return parser


def run_stage(stage: Stage, config: PipelineConfig) -> int:
    """Validate then run one stage; return its exit code."""
    try:
        prepared = stage.validate(config)
    except VALIDATION_ERRORS as exc:
        logger.error(f"{stage.name}: invalid input: {exc}")
        return EXIT_VALIDATION
    try:
        written = stage.run(config, prepared)
    except Exception as exc:
        logger.error(f"{stage.name}: failed: {type(exc).__name__}: {exc}")
        return EXIT_RUNTIME
    for path in written:
        logger.info(f"{stage.name}: wrote {path}")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.output_root is not None:
            Config.OUTPUT_ROOT = args.output_root
        Config.set_threads(args.threads)
        ok, problems = Config.validate_environment()
        if not ok:
            raise ConfigValidationError(problems[0], "invalid environment setting")
        config = PipelineConfig.load(args.config, args.set).validate()
        if args.mkdir:
            os.makedirs(config.output_dir(), exist_ok=True)
    except (ConfigValidationError, ValueError) as exc:
        logger.error(f"invalid configuration: {exc}")
        return EXIT_VALIDATION

    names = PIPELINE_ORDER if args.command == "all" else [args.command]
    for name in names:
        code = run_stage(STAGES[name], config)
        if code != EXIT_OK:
            return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
