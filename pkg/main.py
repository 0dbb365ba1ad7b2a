import argparse
import logging
import sys
from typing import List, Optional

from core.config import get_settings
from core.errors import ConfigurationError, FractalLabError, InputError, PreconditionError
from core.logging_config import setup_logging
from models.schemas import RunReport, Status
from services.experiment_service import ExperimentService, load_config

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_DIVERGENT = 3
EXIT_BUDGET = 4
EXIT_RUNTIME = 5

STATUS_EXIT = {
    Status.CONVERGED: EXIT_OK,
    Status.DIVERGENT: EXIT_DIVERGENT,
    Status.BUDGET_EXCEEDED: EXIT_BUDGET,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fractal-trace-lab",
                                     description="Weighted measures, trace and extension experiments on planar fractals")
    commands = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("run", "run the operation named in a config file"),
                            ("sweep", "run the operation over the [sweep] parameter grid")):
        command = commands.add_parser(name, help=help_text)
        command.add_argument("config", help="path to a TOML experiment file")
        command.add_argument("--output-dir", default=None, help="override the output directory of the config")
    return parser


def exit_code(report: RunReport) -> int:
    if report.summary.get("failed"):
        return EXIT_RUNTIME
    return STATUS_EXIT[report.status]


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging()
    settings = get_settings()
    logger.info(f"{settings.PROJECT_NAME} {args.command} {args.config} (workers={settings.WORKERS})")

    try:
        config = load_config(args.config, args.output_dir)
        service = ExperimentService()
        report = service.sweep(config) if args.command == "sweep" else service.run(config)
    except (ConfigurationError, InputError, PreconditionError) as e:
        logger.error(f"Validation failed: {e}")
        return EXIT_VALIDATION
    except FractalLabError as e:
        logger.error(f"Run failed: {e}")
        return EXIT_RUNTIME
    except OSError as e:
        logger.error(f"I/O failure: {e}")
        return EXIT_RUNTIME

    code = exit_code(report)
    logger.info(f"Exit code {code} ({report.status.value})")
    return code


if __name__ == "__main__":
    sys.exit(main())
