# ===============================================================
# services/experiments.py
# Sweep runners producing plot-ready tables: bulk overlay, alignment
# curves, thresholds and SNR, phase diagrams, classification curves
# and the attention concentration study.
# ===============================================================
import logging
import time
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import numpy as np
import pandas as pd

from core.errors import ConfigError
from domain.models import (
    BulkParams,
    CorrelationModel,
    ExperimentSpec,
    ResultTable,
    SimConfig,
)
from services.attention import attention_concentration
from services.bulk import bulk_edge, default_grid, density, mp_density
from services.classifier import classify_dataset
from services.pooling import pool_scalars, top_eigenvalue, weights_for
from services.sim import empirical_spectrum, generate, repooled
from services.spike import spike_report, threshold_pair, total_alignment
from utils.io_utils import deep_merge, version_string, write_result
from utils.parallel_utils import run_ordered
from utils.rng_utils import substream

logger = logging.getLogger(__name__)

HISTOGRAM_SPAN = 1.2


# ========== Helpers ==========
def _expect_sweep(spec: ExperimentSpec, parameter: str) -> List[float]:
    if spec.sweep.parameter != parameter:
        raise ConfigError(f"{spec.name} sweeps '{parameter}', got sweep.parameter='{spec.sweep.parameter}'")
    return list(spec.sweep.values)


def _mean_se(values) -> tuple:
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        return float(values.mean()), float("nan")
    return float(values.mean()), float(values.std(ddof=1) / np.sqrt(values.size))


def _at_mu(base: SimConfig, mu: float) -> SimConfig:
    return base.with_updates(mu_norm=float(mu))


# ========== Bulk Overlay ==========
def _bulk_trial(job) -> Dict[str, np.ndarray]:
    config, trial, strategies = job
    data = generate(config.model_copy(update={"pooling": "mean"}), trial)
    return {
        s: empirical_spectrum(repooled(data, weights_for(s, config.R))).eigenvalues
        for s in strategies
    }


def run_bulk(spec: ExperimentSpec, threads: Optional[int] = None) -> ResultTable:
    """Eigenvalue histogram against the limiting density, per strategy and signal strength."""
    base = spec.base
    delta, gamma = base.dims.delta, base.dims.gamma
    frames, summary = [], {}

    for mu in _expect_sweep(spec, "mu_norm"):
        config = _at_mu(base, mu)
        spectra = [] if spec.theory_only else run_ordered(
            _bulk_trial, [(config, t, spec.strategies) for t in range(base.trials)], threads
        )
        for strategy in spec.strategies:
            w = weights_for(strategy, base.R)
            scalars = pool_scalars(w, base.R, mu)
            params = BulkParams(delta=delta, gamma=gamma, kappa=scalars.kappa)
            edge, _ = bulk_edge(params)
            report = spike_report(scalars, delta, gamma)
            entry: Dict[str, Any] = {
                "alpha": scalars.alpha, "kappa": scalars.kappa,
                "lambda_plus": edge, "lambda_out": report.lambda_out,
            }

            if spec.theory_only:
                grid = default_grid(params)
                frame = pd.DataFrame({"x": grid})
            else:
                eigs = [s[strategy] for s in spectra]
                top = np.array([e[0] for e in eigs])
                upper = HISTOGRAM_SPAN * max(float(top.max()), edge)
                edges = np.histogram_bin_edges(np.concatenate(eigs), bins="fd", range=(0.0, upper))
                heights = np.array([np.histogram(e, bins=edges, density=True)[0] for e in eigs])
                grid = (edges[:-1] + edges[1:]) / 2
                mc, se = heights.mean(axis=0), (
                    heights.std(axis=0, ddof=1) / np.sqrt(len(eigs)) if len(eigs) > 1 else np.full(grid.size, np.nan)
                )
                frame = pd.DataFrame({"x": grid, "width": np.diff(edges), "density_mc": mc,
                                      "density_se": se, "n_trials": len(eigs)})
                entry["lambda1_mc"], entry["lambda1_se"] = _mean_se(top)

            law = density(params, grid)
            frame.insert(0, "strategy", strategy)
            frame.insert(0, "mu_norm", mu)
            frame["density_theory"] = law.density
            frame["density_mp"] = mp_density(grid, gamma, scalars.kappa)
            frames.append(frame)
            summary[f"{strategy}@{mu:g}"] = entry
            logger.info(f"bulk {strategy} mu={mu:g}: lambda_plus={edge:.6g}, lambda_out={report.lambda_out}")

    return ResultTable(frame=pd.concat(frames, ignore_index=True), metadata={"summary": summary})


# ========== Alignment Curves ==========
def _alignment_trial(job) -> Dict[str, tuple]:
    config, trial, strategies = job
    data = generate(config.model_copy(update={"pooling": "mean"}), trial)
    out = {}
    for s in strategies:
        spectrum = empirical_spectrum(repooled(data, weights_for(s, config.R)))
        out[s] = (spectrum.top_vector_alignment, float(spectrum.eigenvalues[0]))
    return out


def run_alignment(spec: ExperimentSpec, threads: Optional[int] = None) -> ResultTable:
    base = spec.base
    delta, gamma = base.dims.delta, base.dims.gamma
    mus = _expect_sweep(spec, "mu_norm")
    weights = {s: weights_for(s, base.R) for s in spec.strategies}

    results = [] if spec.theory_only else run_ordered(
        _alignment_trial,
        [(_at_mu(base, mu), t, spec.strategies) for mu in mus for t in range(base.trials)],
        threads,
    )

    rows = []
    for i, mu in enumerate(mus):
        for s in spec.strategies:
            report = spike_report(pool_scalars(weights[s], base.R, mu), delta, gamma)
            row = {"mu_norm": mu, "strategy": s, "alignment_theory": report.total_alignment,
                   "lambda_out_theory": report.lambda_out, "mu_samp_theory": report.mu_samp}
            if not spec.theory_only:
                chunk = results[i * base.trials:(i + 1) * base.trials]
                row["alignment_mc"], row["alignment_se"] = _mean_se([r[s][0] for r in chunk])
                row["lambda1_mc"], row["lambda1_se"] = _mean_se([r[s][1] for r in chunk])
                row["n_trials"] = base.trials
            rows.append(row)
        logger.info(f"alignment sweep {i + 1}/{len(mus)} done (mu={mu:g})")
    return ResultTable(frame=pd.DataFrame(rows))


# ========== Phase Diagram ==========
def _phase_column(job) -> List[dict]:
    delta, mus, gamma, R, strategies = job
    rows = []
    for s in strategies:
        scalars = pool_scalars(weights_for(s, R), R)
        _, mu_samp = threshold_pair(scalars.snr, scalars.kappa, delta, gamma)
        for mu in mus:
            rho = scalars.snr * mu * mu
            rows.append({
                "delta": delta, "mu_norm": mu, "strategy": s,
                "alignment_theory": total_alignment(rho, delta, gamma, scalars.kappa),
                "mu_samp_theory": mu_samp,
            })
    return rows


def run_phase_diagram(spec: ExperimentSpec, threads: Optional[int] = None) -> ResultTable:
    """Total alignment over the (mu, delta) plane with the sample threshold curve."""
    mus = _expect_sweep(spec, "mu_norm")
    if spec.secondary is None or spec.secondary.parameter != "delta":
        raise ConfigError("phase_diagram needs a secondary sweep over 'delta'")
    if not spec.theory_only:
        logger.warning("phase_diagram is theory-only; Monte Carlo settings are ignored")
    base = spec.base
    jobs = [(float(delta), mus, base.dims.gamma, base.R, spec.strategies) for delta in spec.secondary.values]
    columns = run_ordered(_phase_column, jobs, threads)
    return ResultTable(frame=pd.DataFrame([row for column in columns for row in column]))


# ========== Thresholds and SNR ==========
def _prefix_length(spec: ExperimentSpec) -> int:
    if spec.base.R.kind != "prefix":
        raise ConfigError(f"{spec.name} sweeps the prefix model; base.R.kind is '{spec.base.R.kind}'")
    return spec.base.R.L


def run_thresholds_and_snr(spec: ExperimentSpec, threads: Optional[int] = None) -> ResultTable:
    base = spec.base
    L0 = _prefix_length(spec)
    rows = []
    if spec.name == "thresholds":
        T = base.dims.T
        for L in _expect_sweep(spec, "L"):
            L = int(L)
            if not 1 <= L <= T:
                raise ConfigError(f"threshold sweep value L={L} outside [1, T={T}]")
            R = CorrelationModel.prefix(L, T)
            for s in spec.strategies:
                scalars = pool_scalars(weights_for(s, R), R)
                mu_pop, mu_samp = threshold_pair(scalars.snr, scalars.kappa, base.dims.delta, base.dims.gamma)
                rows.append({"L": L, "strategy": s, "snr": scalars.snr, "kappa": scalars.kappa,
                             "mu_pop_theory": mu_pop, "mu_samp_theory": mu_samp})
    else:
        for T in _expect_sweep(spec, "T"):
            T = int(T)
            if T < L0:
                logger.warning(f"snr sweep skips T={T} < L={L0}")
                continue
            R = CorrelationModel.prefix(L0, T)
            lam_max = top_eigenvalue(R)
            for s in spec.strategies:
                scalars = pool_scalars(weights_for(s, R), R)
                rows.append({"T": T, "strategy": s, "snr": scalars.snr, "kappa": scalars.kappa,
                             "alpha": scalars.alpha, "lambda_max_R": lam_max})
    return ResultTable(frame=pd.DataFrame(rows))


# ========== Classification ==========
def _classification_trial(job) -> Dict[str, tuple]:
    config, index, trial, strategies, lambda_ridge, split = job
    data = generate(config, trial)
    rng = substream(config.seed, trial, 1, index)
    return classify_dataset(data, config.R, strategies, lambda_ridge, split, rng)


def run_classification(spec: ExperimentSpec, threads: Optional[int] = None) -> ResultTable:
    """Mean ridge test accuracy per signal strength and pooling strategy."""
    if spec.theory_only:
        raise ConfigError("classify has no theory columns; unset theory_only")
    base = spec.base
    mus = _expect_sweep(spec, "mu_norm")
    jobs = [
        (_at_mu(base, mu).model_copy(update={"pooling": "mean"}), i, t, spec.strategies, spec.lambda_ridge, spec.split)
        for i, mu in enumerate(mus)
        for t in range(base.trials)
    ]
    results = run_ordered(_classification_trial, jobs, threads)

    rows = []
    for i, mu in enumerate(mus):
        chunk = results[i * base.trials:(i + 1) * base.trials]
        for s in spec.strategies:
            test_mc, test_se = _mean_se([r[s][1] for r in chunk])
            train_mc, train_se = _mean_se([r[s][0] for r in chunk])
            rows.append({"mu_norm": mu, "strategy": s, "test_acc_mc": test_mc, "test_acc_se": test_se,
                         "train_acc_mc": train_mc, "train_acc_se": train_se, "n_trials": base.trials})
    return ResultTable(frame=pd.DataFrame(rows))


# ========== Attention Concentration ==========
def run_attn_concentration(spec: ExperimentSpec, threads: Optional[int] = None) -> ResultTable:
    base = spec.base
    frame, slope = attention_concentration(
        d_grid=_expect_sweep(spec, "d"),
        T=base.dims.T,
        tau=spec.tau,
        n_sequences=spec.n_sequences,
        trials=base.trials,
        seed=base.seed,
        mu_norm=base.dims.mu_norm,
        vocab_factor=spec.vocab_factor,
        R=base.R,
        noise_kind=base.noise_kind,
        threads=threads,
    )
    return ResultTable(frame=frame, metadata={"slope": slope, "expected_slope": -0.5})


REGISTRY: Dict[str, Callable[[ExperimentSpec, Optional[int]], ResultTable]] = {
    "bulk": run_bulk,
    "align": run_alignment,
    "thresholds": run_thresholds_and_snr,
    "snr": run_thresholds_and_snr,
    "phase_diagram": run_phase_diagram,
    "classify": run_classification,
    "attn_concentration": run_attn_concentration,
}


# ========== Built-in Defaults ==========
def _grid(lo: float, hi: float, points: int) -> List[float]:
    return [float(v) for v in np.linspace(lo, hi, points)]


_PREFIX_T10 = {"kind": "prefix", "T": 10, "L": 3}

DEFAULTS: Dict[str, Dict[str, Any]] = {
    "bulk": {
        "base": {"dims": {"d": 500, "V": 800, "N": 1000, "T": 10, "mu_norm": 2.5}, "R": _PREFIX_T10, "trials": 5},
        "sweep": {"parameter": "mu_norm", "values": [2.5]},
        "strategies": ["mean", "causal"],
    },
    "align": {
        "base": {"dims": {"d": 500, "V": 800, "N": 1000, "T": 10}, "R": _PREFIX_T10, "trials": 20},
        "sweep": {"parameter": "mu_norm", "values": _grid(0.0, 5.0, 41)},
    },
    "thresholds": {
        "base": {"dims": {"d": 500, "V": 800, "N": 1000, "T": 10}, "R": _PREFIX_T10},
        "sweep": {"parameter": "L", "values": [float(L) for L in range(1, 11)]},
        "strategies": ["mean", "causal"],
        "theory_only": True,
    },
    "snr": {
        "base": {"dims": {"d": 500, "V": 800, "N": 1000, "T": 10}, "R": _PREFIX_T10},
        "sweep": {"parameter": "T", "values": [float(T) for T in range(3, 65)]},
        "strategies": ["mean", "causal"],
        "theory_only": True,
    },
    "phase_diagram": {
        "base": {
            "dims": {"d": 500, "V": 1000, "N": 1000, "T": 20},
            "R": {"kind": "spiked", "T": 20, "theta_R": 10.0, "support": 5},
            "xi_mode": "gaussian_factor",
        },
        "sweep": {"parameter": "mu_norm", "values": _grid(0.0, 5.0, 60)},
        "secondary": {"parameter": "delta", "values": _grid(0.05, 2.0, 60)},
        "strategies": ["mean", "optimal"],
        "theory_only": True,
    },
    "classify": {
        "base": {"dims": {"d": 300, "V": 500, "N": 800, "T": 10}, "R": _PREFIX_T10, "trials": 20},
        "sweep": {"parameter": "mu_norm", "values": _grid(0.0, 5.0, 41)},
        "strategies": ["mean", "causal", "optimal", "learned"],
    },
    "attn_concentration": {
        "base": {"dims": {"d": 200, "V": 12800, "N": 300, "T": 10, "mu_norm": 1.0}, "R": _PREFIX_T10},
        "sweep": {"parameter": "d", "values": [200.0, 400.0, 800.0, 1600.0, 3200.0]},
        "strategies": ["causal"],
        "theory_only": True,
    },
}


def _clean_override(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """Drop derived fields an override would contradict before merging."""
    base = dict(base)
    spec_base = dict(base.get("base", {}))
    new = override.get("base", {})
    if "R" in new:
        spec_base.pop("R", None)
    if "dims" in new and "dims" in spec_base:
        dims = dict(spec_base["dims"])
        touched = set(new["dims"])
        if touched & {"d", "V"} and "delta" not in touched:
            dims.pop("delta", None)
        if touched & {"d", "N"} and "gamma" not in touched:
            dims.pop("gamma", None)
        spec_base["dims"] = dims
    if spec_base:
        base["base"] = spec_base
    if "secondary" in override:
        base.pop("secondary", None)
    return base


def resolve_spec(name: str, *overrides: Dict[str, Any]) -> ExperimentSpec:
    """Built-in defaults for name, deep-merged with each override in turn."""
    if name not in DEFAULTS:
        raise ConfigError(f"unknown experiment '{name}'; choose from {sorted(DEFAULTS)}")
    resolved: Dict[str, Any] = {"name": name, **DEFAULTS[name]}
    for override in overrides:
        if not override:
            continue
        if override.get("name", name) != name:
            raise ConfigError(f"config names experiment '{override['name']}', command asked for '{name}'")
        resolved = deep_merge(_clean_override(resolved, override), override)
    return ExperimentSpec.model_validate(resolved)


def default_spec(name: str) -> ExperimentSpec:
    return resolve_spec(name)


def run_experiment(spec: ExperimentSpec, threads: Optional[int] = None, write: bool = True) -> ResultTable:
    """Run one registered experiment and write its table and manifest."""
    logger.info(f"experiment {spec.name} started")
    started = time.perf_counter()
    table = REGISTRY[spec.name](spec, threads)
    wall_time = time.perf_counter() - started
    logger.info(f"experiment {spec.name} finished in {wall_time:.2f}s")

    table.metadata.update({
        "spec": spec.model_dump(mode="json"),
        "seed": spec.base.seed,
        "version": version_string(),
    })
    if write:
        write_result(Path(spec.outputs) / spec.name, table.frame, {**table.metadata, "wall_time_s": wall_time})
    return table
