# routes/theory.py
"""Theory queries: bulk density and edge, outlier report, thresholds, weight constructors."""
import argparse
import logging

import numpy as np
import pandas as pd

from domain.models import BulkParams
from domain.schemas import (
    CausalWeightsRequest,
    DensityRequest,
    BulkRequest,
    OptimalWeightsRequest,
    SpikeRequest,
    ThresholdsRequest,
)
from services.bulk import DEFAULT_GRID_SPAN, bulk_edge, density, left_edge, point_mass_at_zero
from services.pooling import causal_weights, optimal_weights, pool_scalars, top_eigenvalue, weights_for
from services.spike import spike_report, threshold_pair
from utils.cli_utils import add_correlation_flags, build_request, correlation_from_args, emit, out_dir
from utils.io_utils import read_weights, write_result

logger = logging.getLogger(__name__)

FULL = "%.17g"


def _add_bulk_flags(parser: argparse.ArgumentParser, kappa: bool = True) -> None:
    parser.add_argument("--delta", type=float, help="embedding dimension over vocabulary size, d/V")
    parser.add_argument("--gamma", type=float, help="embedding dimension over sample count, d/N")
    if kappa:
        parser.add_argument("--kappa", type=float, help="squared norm of the pooling weights, scales the bulk")


def _bulk_flags(args) -> dict:
    return {"delta": args.delta, "gamma": args.gamma, "kappa": getattr(args, "kappa", None)}


def _pooling_flags(args) -> dict:
    flags = {"R": correlation_from_args(args, args.T), "strategy": args.strategy}
    if args.w_file:
        flags["weights"] = {"w": read_weights(args.w_file)}
    return flags


def _resolve_weights(request):
    return request.weights if request.strategy == "custom" else weights_for(request.strategy, request.R)


# ========== Handlers ==========
def handle_density(args) -> int:
    request = build_request(DensityRequest, args, {**_bulk_flags(args), "points": args.points,
                                                   "x_max": args.x_max, "eta": args.eta})
    params = BulkParams(delta=request.delta, gamma=request.gamma, kappa=request.kappa)
    edge, _ = bulk_edge(params)
    grid = np.linspace(0.0, request.x_max or DEFAULT_GRID_SPAN * edge, request.points)
    law = density(params, grid, request.eta)
    frame = pd.DataFrame({"x": law.grid, "rho": law.density, "valid": law.valid})
    header = {"delta": params.delta, "gamma": params.gamma, "kappa": params.kappa, "eta": law.eta, "lambda_plus": edge}
    target = write_result(out_dir(args, "density"), frame, {"request": request.model_dump(), "eta": law.eta}, header)
    emit({
        "edge_right": law.edge_right,
        "edge_left": law.edge_left,
        "atom_at_zero": point_mass_at_zero(params),
        "mass": law.mass(),
        "table": str(target / "table.csv"),
    })
    return 0


def handle_edge(args) -> int:
    request = build_request(BulkRequest, args, _bulk_flags(args))
    params = BulkParams(**request.model_dump())
    edge, roots = bulk_edge(params)
    print(f"lambda_plus {FULL % edge}")
    for k, x in enumerate(roots):
        print(f"x_{k} {FULL % x}")
    print(f"lambda_minus {FULL % left_edge(params)}")
    return 0


def handle_spike(args) -> int:
    request = build_request(SpikeRequest, args, {**_pooling_flags(args), "delta": args.delta,
                                                 "gamma": args.gamma, "mu_norm": args.mu_norm})
    scalars = pool_scalars(_resolve_weights(request), request.R, request.mu_norm)
    report = spike_report(scalars, request.delta, request.gamma)
    emit({**report.model_dump(), "scalars": {"alpha": scalars.alpha, "kappa": scalars.kappa, "snr": scalars.snr}})
    return 0


def handle_thresholds(args) -> int:
    request = build_request(ThresholdsRequest, args, {**_pooling_flags(args), "delta": args.delta,
                                                      "gamma": args.gamma})
    scalars = pool_scalars(_resolve_weights(request), request.R)
    mu_pop, mu_samp = threshold_pair(scalars.snr, scalars.kappa, request.delta, request.gamma)
    emit({"mu_pop": mu_pop, "mu_samp": mu_samp, "snr": scalars.snr, "kappa": scalars.kappa})
    return 0


def handle_optimal_weights(args) -> int:
    request = build_request(OptimalWeightsRequest, args, {"R": correlation_from_args(args, args.T)})
    w = optimal_weights(request.R)
    scalars = pool_scalars(w, request.R)
    emit({"w": w.w, "snr": scalars.snr, "lambda_max": top_eigenvalue(request.R)})
    return 0


def handle_causal_weights(args) -> int:
    request = build_request(CausalWeightsRequest, args, {"T": args.T})
    print(" ".join(FULL % v for v in causal_weights(request.T).w))
    return 0


# ========== Registration ==========
def register(subparsers, common: argparse.ArgumentParser) -> None:
    p = subparsers.add_parser("density", parents=[common],
                              help="limiting eigenvalue density of the pooled sample covariance")
    _add_bulk_flags(p)
    p.add_argument("--points", type=int, help="number of grid points from 0 to x-max")
    p.add_argument("--x-max", dest="x_max", type=float, help="right end of the grid (default 1.15 x edge)")
    p.add_argument("--eta", type=float, help="imaginary offset used to read the density off the transform")
    p.set_defaults(handler=handle_density)

    p = subparsers.add_parser("edge", parents=[common], help="right support edge and the candidate edge roots")
    _add_bulk_flags(p)
    p.set_defaults(handler=handle_edge)

    for name, handler, extra in (
        ("spike", handle_spike, "outlier location, overlaps and regime for pooled data"),
        ("thresholds", handle_thresholds, "population and sample signal-strength thresholds"),
    ):
        p = subparsers.add_parser(name, parents=[common], help=extra)
        _add_bulk_flags(p, kappa=False)
        p.add_argument("--T", type=int, help="sequence length")
        p.add_argument("--strategy", choices=["mean", "causal", "optimal", "custom"],
                       help="pooling weights: uniform mean, harmonic causal attention limit, or alpha/kappa-optimal")
        p.add_argument("--w-file", dest="w_file",
                       help="weights for --strategy custom: one comma-separated row of T values")
        if name == "spike":
            p.add_argument("--mu-norm", dest="mu_norm", type=float, help="signal strength, norm of the mean embedding")
        add_correlation_flags(p)
        p.set_defaults(handler=handler)

    p = subparsers.add_parser("optimal-weights", parents=[common],
                              help="weights maximizing alpha/kappa: normalized top eigenvector of R")
    p.add_argument("--T", type=int, help="sequence length")
    add_correlation_flags(p)
    p.set_defaults(handler=handle_optimal_weights)

    p = subparsers.add_parser("causal-weights", parents=[common],
                              help="deterministic limit of masked causal softmax attention pooling")
    p.add_argument("--T", type=int, help="sequence length")
    p.set_defaults(handler=handle_causal_weights)
