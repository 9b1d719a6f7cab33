# routes/simulation.py
"""Monte Carlo commands: simulate, attn-concentration, classify."""
import argparse
import logging

import numpy as np
import pandas as pd

from core.config import settings
from domain.models import BulkParams, EmpiricalSpectrum
from domain.schemas import AttnConcentrationRequest, ClassifyRequest, SimulateRequest
from services.attention import attention_concentration
from services.bulk import bulk_edge
from services.classifier import classify
from services.pooling import causal_weights, pool_scalars
from services.sim import empirical_spectrum, generate, has_outlier, resolve_weights
from services.spike import spike_report
from utils.cli_utils import add_correlation_flags, build_request, correlation_from_args, emit, out_dir
from utils.io_utils import dump_arrays, write_result
from utils.parallel_utils import run_ordered

logger = logging.getLogger(__name__)


def _add_sim_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("model dimensions")
    group.add_argument("--d", type=int, help="embedding dimension")
    group.add_argument("--V", type=int, help="vocabulary size (even, half the tokens per sign)")
    group.add_argument("--N", type=int, help="number of pooled sequences")
    group.add_argument("--T", type=int, help="sequence length")
    group.add_argument("--mu-norm", dest="mu_norm", type=float, help="signal strength, norm of the mean embedding")
    parser.add_argument("--noise-kind", dest="noise_kind", choices=["gaussian", "rademacher"],
                        help="distribution of the embedding noise; rademacher checks universality")
    parser.add_argument("--xi-mode", dest="xi_mode", choices=["binary", "gaussian_factor"],
                        help="positional signs: +-1 draws, or real Gaussian factors for correlations signs cannot realize")
    parser.add_argument("--table", choices=["centered", "raw"],
                        help="noise table: centered within each sign class, or raw draws with class-mean leakage")
    parser.add_argument("--trials", type=int, help="independent draws, each on its own random substream")
    parser.add_argument("--label-prefix", dest="label_prefix", type=int,
                        help="labels are the sign of the sum of the first positions (default: prefix length)")
    add_correlation_flags(parser)


def _sim_flags(args) -> dict:
    return {
        "dims": {"d": args.d, "V": args.V, "N": args.N, "T": args.T, "mu_norm": args.mu_norm},
        "R": correlation_from_args(args, args.T),
        "noise_kind": args.noise_kind,
        "xi_mode": args.xi_mode,
        "table": args.table,
        "trials": args.trials,
        "label_prefix": args.label_prefix,
        "seed": args.seed,
    }


def _simulate_trial(job) -> EmpiricalSpectrum:
    config, trial, dump_to = job
    data = generate(config, trial)
    spectrum = empirical_spectrum(data)
    if dump_to is not None:
        arrays = {"E": data.E, "xi": data.xi, "tokens": data.tokens, "C": data.C}
        if data.y is not None:
            arrays["y"] = data.y
        dump_arrays(dump_to / f"trial_{trial}", arrays, {"config": config.model_dump(mode="json"), "trial": trial})
    return spectrum


# ========== Handlers ==========
def handle_simulate(args) -> int:
    request = build_request(SimulateRequest, args, {**_sim_flags(args), "pooling": args.pooling,
                                                    "attention_tau": args.tau, "dump": args.dump or None},
                            defaults={"seed": settings.SEED})
    config = request
    target = out_dir(args, "simulate")
    dump_to = target / "dataset" if request.dump else None
    results = run_ordered(_simulate_trial, [(config, t, dump_to) for t in range(config.trials)], args.threads)

    weights = resolve_weights(config) or causal_weights(config.dims.T)
    scalars = pool_scalars(weights, config.R, config.dims.mu_norm)
    edge, _ = bulk_edge(BulkParams(delta=config.dims.delta, gamma=config.dims.gamma, kappa=scalars.kappa))
    report = spike_report(scalars, config.dims.delta, config.dims.gamma)

    frame = pd.DataFrame([
        {"trial": t, "index": i, "eigenvalue": v}
        for t, s in enumerate(results) for i, v in enumerate(s.eigenvalues)
    ])
    top = np.array([s.eigenvalues[0] for s in results])
    write_result(target, frame, {"config": config.model_dump(mode="json"), "seed": config.seed})
    emit({
        "lambda1_mean": float(top.mean()),
        "alignment_mean": float(np.mean([s.top_vector_alignment for s in results])),
        "outlier_trials": int(sum(has_outlier(s, edge, config.dims.d) for s in results)),
        "lambda_plus_theory": edge,
        "lambda_out_theory": report.lambda_out,
        "alignment_theory": report.total_alignment,
        "table": str(target / "table.csv"),
    })
    return 0


def handle_attn_concentration(args) -> int:
    d_grid = [int(v) for v in args.d_grid.split(",")] if args.d_grid else None
    request = build_request(AttnConcentrationRequest, args, {
        "d_grid": d_grid, "R": correlation_from_args(args, args.T), "T": args.T, "tau": args.tau,
        "n_sequences": args.n_sequences, "trials": args.trials, "seed": args.seed, "mu_norm": args.mu_norm,
        "vocab_factor": args.vocab_factor, "noise_kind": args.noise_kind,
    }, defaults={"seed": settings.SEED})
    frame, slope = attention_concentration(
        d_grid=request.d_grid, T=request.T, tau=request.tau, n_sequences=request.n_sequences,
        trials=request.trials, seed=request.seed, mu_norm=request.mu_norm,
        vocab_factor=request.vocab_factor, R=request.R, noise_kind=request.noise_kind, threads=args.threads,
    )
    target = write_result(out_dir(args, "attn_concentration"), frame,
                          {"request": request.model_dump(mode="json"), "slope": slope})
    emit({"slope": slope, "table": str(target / "table.csv")})
    return 0


def handle_classify(args) -> int:
    request = build_request(ClassifyRequest, args, {**_sim_flags(args), "strategy": args.strategy,
                                                    "lambda_ridge": args.lambda_ridge, "split": args.split},
                            defaults={"seed": settings.SEED})
    scores = run_ordered(
        lambda t: classify(request, request.strategy, request.lambda_ridge, request.split, t),
        range(request.trials), args.threads,
    )
    train, test = np.array(scores).T
    emit({
        "strategy": request.strategy,
        "train_acc": float(train.mean()),
        "test_acc": float(test.mean()),
        "test_acc_se": float(test.std(ddof=1) / np.sqrt(test.size)) if test.size > 1 else None,
        "n_trials": int(test.size),
    })
    return 0


# ========== Registration ==========
def register(subparsers, common: argparse.ArgumentParser) -> None:
    p = subparsers.add_parser("simulate", parents=[common],
                              help="draw the token-sequence model and report the pooled spectrum")
    _add_sim_flags(p)
    p.add_argument("--pooling", choices=["mean", "causal", "optimal", "attention"],
                   help="fixed pooling weights, or empirical causal softmax attention per sequence")
    p.add_argument("--tau", type=float, help="attention score scale; scores are tau/d times inner products")
    p.add_argument("--dump", action="store_true", help="also write E, xi, tokens and C of every trial as CSV")
    p.set_defaults(handler=handle_simulate)

    p = subparsers.add_parser("attn-concentration", parents=[common],
                              help="distance of empirical attention weights from their harmonic limit versus d")
    p.add_argument("--d-grid", dest="d_grid", help="comma-separated embedding dimensions, ascending")
    p.add_argument("--T", type=int, help="sequence length")
    p.add_argument("--tau", type=float, help="attention score scale; scores are tau/d times inner products")
    p.add_argument("--n-sequences", dest="n_sequences", type=int, help="sequences per trial and d")
    p.add_argument("--trials", type=int, help="independent draws per d")
    p.add_argument("--mu-norm", dest="mu_norm", type=float, help="signal strength, norm of the mean embedding")
    p.add_argument("--vocab-factor", dest="vocab_factor", type=int, help="vocabulary size as a multiple of d")
    p.add_argument("--noise-kind", dest="noise_kind", choices=["gaussian", "rademacher"],
                   help="distribution of the embedding noise")
    add_correlation_flags(p)
    p.set_defaults(handler=handle_attn_concentration)

    p = subparsers.add_parser("classify", parents=[common],
                              help="ridge classification of pooled sequences on a train/test split")
    _add_sim_flags(p)
    p.add_argument("--strategy", choices=["mean", "causal", "optimal", "learned"],
                   help="pooling weights; learned optimizes softmax weights jointly with the ridge fit")
    p.add_argument("--lambda-ridge", dest="lambda_ridge", type=float, help="ridge penalty, scaled by the train size")
    p.add_argument("--split", type=float, help="fraction of sequences used for training")
    p.set_defaults(handler=handle_classify)
