# routes/experiments.py
"""`experiment <name>`: run a registered sweep and write table.csv + manifest.json."""
import argparse
import logging

from core.config import settings
from services.experiments import REGISTRY, resolve_spec, run_experiment
from utils.cli_utils import emit, prune
from utils.io_utils import load_json

logger = logging.getLogger(__name__)


def handle_experiment(args) -> int:
    file_data = load_json(args.config) if args.config else {}
    env_defaults = {"outputs": settings.OUT_DIR, "base": {"seed": settings.SEED}}
    flags = prune({
        "outputs": args.out,
        "theory_only": True if args.theory_only else None,
        "base": {"seed": args.seed, "trials": args.trials},
    })
    spec = resolve_spec(args.name, env_defaults, file_data, flags)
    table = run_experiment(spec, threads=args.threads)
    summary = {k: v for k, v in table.metadata.items() if k not in ("spec",)}
    emit({"experiment": spec.name, "rows": len(table.frame),
          "table": f"{spec.outputs}/{spec.name}/table.csv", **summary})
    return 0


def register(subparsers, common: argparse.ArgumentParser) -> None:
    p = subparsers.add_parser("experiment", parents=[common],
                              help="regenerate one plot's data as a table")
    p.add_argument("name", choices=sorted(REGISTRY),
                   help="bulk overlay, alignment curves, thresholds or SNR sweeps, phase diagram, "
                        "classification curves, or attention concentration")
    p.add_argument("--trials", type=int, help="Monte Carlo trials per sweep point")
    p.add_argument("--theory-only", dest="theory_only", action="store_true",
                   help="skip Monte Carlo columns and compute the limiting predictions only")
    p.set_defaults(handler=handle_experiment)
