import argparse
import json
import logging
import sys
from typing import List, Optional

from pydantic import ValidationError

from core.config import __version__, configure_logging, settings
from core.errors import AttnSpecError, ConfigError
from domain.schemas import CliConfig

# Import all command groups
from routes import experiments, simulation, theory

logger = logging.getLogger("attnspec")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with the same fields as the flags; flags win")
    common.add_argument("--out", help=f"output directory (default $ATTNSPEC_OUT or {settings.OUT_DIR})")
    common.add_argument("--seed", type=int, help="master seed; fully determines every random draw")
    common.add_argument("--threads", type=int, default=settings.THREADS, help="cap on the worker pool")
    common.add_argument("--log-level", dest="log_level", type=str.upper,
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="log verbosity; logs go to stderr")

    parser = argparse.ArgumentParser(
        prog="attnspec",
        description="Spectral theory and Monte Carlo checks for attention-pooled sample covariances",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)

    # Register all command groups
    theory.register(subparsers, common)
    simulation.register(subparsers, common)
    experiments.register(subparsers, common)
    return parser


def _report(error: Exception, code: int, diagnostics: Optional[dict] = None) -> int:
    sys.stderr.write(f"error: {error}\n")
    if diagnostics:
        sys.stderr.write(json.dumps(diagnostics, indent=2, default=str) + "\n")
    return code


def main(argv: Optional[List[str]] = None) -> int:
    """Dispatch one subcommand; 0 on success, 2 on configuration errors, 1 otherwise."""
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)
    logger.debug(f"dispatching {args.command}")

    try:
        CliConfig(command=args.command, config_file=args.config, out=args.out, seed=args.seed,
                  threads=args.threads, log_level=args.log_level)
        return args.handler(args) or 0
    except ValidationError as e:
        fields = [".".join(str(p) for p in err["loc"]) or "<root>" for err in e.errors()]
        return _report(
            ConfigError(f"invalid configuration for {', '.join(fields)}"), 2,
            {"errors": [{"field": f, "message": err["msg"]} for f, err in zip(fields, e.errors())]},
        )
    except AttnSpecError as e:
        return _report(e, e.exit_code, e.diagnostics)
    except ValueError as e:
        return _report(e, 2)


if __name__ == "__main__":
    sys.exit(main())
