# ===============================================================
# services/sim.py
# Finite-size generator for the token-sequence model: embedding table,
# positional signs, sampled tokens, pooled matrix and its spectrum.
# ===============================================================
import logging
import math
from typing import Optional

import numpy as np

from core.errors import ConfigError
from domain.models import CorrelationModel, Dataset, EmpiricalSpectrum, PoolWeights, SimConfig
from services.pooling import correlation_matrix, weights_for
from utils.rng_utils import rademacher, substream

logger = logging.getLogger(__name__)

OUTLIER_BUFFER = 5.0


def draw_noise(rng: np.random.Generator, kind: str, shape) -> np.ndarray:
    """Unit-variance noise; rademacher keeps the fourth moment bounded."""
    if kind == "gaussian":
        return rng.standard_normal(shape)
    if kind == "rademacher":
        return rademacher(rng, shape)
    raise ConfigError(f"unknown noise_kind '{kind}'")


def noise_table(rng: np.random.Generator, kind: str, d: int, V: int, centered: bool = True) -> np.ndarray:
    """d x V noise Z; a centered table has zero mean within each sign class.

    Centering is rescaled so every coordinate keeps unit variance. Without it the class means
    of Z add a direction of squared norm ~ d/V to the signal and a second spike of the same size.
    """
    Z = draw_noise(rng, kind, (d, V))
    if not centered:
        return Z
    half = V // 2
    for block in (slice(0, half), slice(half, V)):
        part = Z[:, block]
        size = part.shape[1]
        Z[:, block] = (part - part.mean(axis=1, keepdims=True)) * math.sqrt(size / (size - 1))
    return Z


def _psd_factor(sigma: np.ndarray, unit_diagonal: bool = False) -> np.ndarray:
    """F with F F' equal to the PSD projection of sigma."""
    vals, vecs = np.linalg.eigh((sigma + sigma.T) / 2)
    factor = vecs * np.sqrt(np.clip(vals, 0.0, None))
    if unit_diagonal:
        norms = np.linalg.norm(factor, axis=1)
        factor = factor / np.where(norms > 0, norms, 1.0)[:, None]
    return factor


def sample_signs(R: CorrelationModel, N: int, rng: np.random.Generator) -> np.ndarray:
    """N x T matrix of +-1 signs with E[xi xi'] = R."""
    T = R.T
    if R.kind == "prefix":
        L = R.L
        shared = rademacher(rng, (N, 1))
        return np.hstack([np.repeat(shared, L, axis=1), rademacher(rng, (N, T - L))])
    if not R.is_sign_realizable:
        raise ConfigError(
            f"{R.kind} correlation cannot be realized by +-1 signs (needs unit diagonal and "
            f"|off-diagonal| <= 1); use xi_mode='gaussian_factor'"
        )
    # arcsine law: E[sign g_i sign g_j] = (2/pi) arcsin(sin(pi R_ij / 2)) = R_ij
    sigma = np.clip(np.sin(math.pi * correlation_matrix(R) / 2), -1.0, 1.0)
    g = rng.standard_normal((N, T)) @ _psd_factor(sigma, unit_diagonal=True).T
    return np.where(g >= 0, 1.0, -1.0)


def sample_gaussian_factors(R: CorrelationModel, N: int, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal((N, R.T)) @ _psd_factor(correlation_matrix(R)).T


def sample_tokens(xi: np.ndarray, V: int, rng: np.random.Generator) -> np.ndarray:
    """Token ids drawn uniformly from the half of the vocabulary matching each sign."""
    half = V // 2
    picks = rng.integers(0, half, size=xi.shape)
    return np.where(xi > 0, picks, half + picks)


def labels(xi: np.ndarray, L: int) -> np.ndarray:
    """y = sign(sum of the first L positions); ties go to +1."""
    return np.where(xi[:, :L].sum(axis=1) >= 0, 1.0, -1.0)


def resolve_weights(config: SimConfig) -> Optional[PoolWeights]:
    if isinstance(config.pooling, PoolWeights):
        return config.pooling
    if config.pooling == "attention":
        return None
    return weights_for(config.pooling, config.R)


def embedded_sequences(data: Dataset) -> np.ndarray:
    """N x T x d array of token embeddings with the signal carried by xi."""
    X = np.moveaxis(data.E[:, data.tokens], 0, -1)
    shift = data.xi - data.signs[data.tokens]
    if np.any(shift):
        X = X + shift[..., None] * data.mu
    return X


def pool(E: np.ndarray, tokens: np.ndarray, w: np.ndarray) -> np.ndarray:
    C = np.zeros((E.shape[0], tokens.shape[0]))
    for t in range(tokens.shape[1]):
        C += w[t] * E[:, tokens[:, t]]
    return C


def generate(config: SimConfig, trial: int = 0) -> Dataset:
    """One draw of the model, deterministic in (config.seed, trial)."""
    dims = config.dims
    d, V, N, T = dims.d, dims.V, dims.N, dims.T
    if config.xi_mode == "binary" and V % 2:
        raise ConfigError(f"binary signs need an even vocabulary, got V={V}")
    rng = substream(config.seed, trial)

    mu = np.zeros(d)
    mu[0] = dims.mu_norm
    signs = np.concatenate([np.ones(V // 2), -np.ones(V - V // 2)])
    E = noise_table(rng, config.noise_kind, d, V, config.table == "centered") + np.outer(mu, signs)

    if config.xi_mode == "binary":
        xi = sample_signs(config.R, N, rng)
        tokens = sample_tokens(xi, V, rng)
    else:
        xi = sample_gaussian_factors(config.R, N, rng)
        tokens = rng.integers(0, V, size=(N, T))

    L = config.label_length
    data = Dataset(
        E=E, signs=signs, mu=mu, xi=xi, tokens=tokens,
        weights=np.zeros(T), C=np.zeros((d, N)),
        y=labels(xi, L) if L else None,
    )

    weights = resolve_weights(config)
    if weights is None:
        from services.attention import causal_attention_weights

        X = embedded_sequences(data)
        per_sequence = causal_attention_weights(X, config.attention_tau)
        data.weights = per_sequence
        data.C = np.einsum("ntj,nt->jn", X, per_sequence)
        return data

    w = weights.array
    data.weights = w
    data.C = pool(E, tokens, w)
    if config.xi_mode == "gaussian_factor":
        data.C += np.outer(mu, (xi - signs[tokens]) @ w)
    return data


def repooled(data: Dataset, weights: PoolWeights) -> Dataset:
    """Same draw pooled with other fixed weights."""
    w = weights.array
    if w.size != data.tokens.shape[1]:
        raise ConfigError(f"{w.size} weights for sequences of length {data.tokens.shape[1]}")
    C = pool(data.E, data.tokens, w)
    shift = data.xi - data.signs[data.tokens]
    if np.any(shift):
        C += np.outer(data.mu, shift @ w)
    return data.model_copy(update={"weights": w, "C": C})


def empirical_spectrum(data: Dataset, u: Optional[np.ndarray] = None) -> EmpiricalSpectrum:
    """Eigen-decomposition of S = C C' / N, eigenvalues descending."""
    d = data.C.shape[0]
    if u is None:
        u = np.zeros(d)
        u[0] = 1.0
    u = np.asarray(u, dtype=float)
    S = data.C @ data.C.T / data.N
    vals, vecs = np.linalg.eigh(S)
    vals, top = vals[::-1], vecs[:, -1]
    alignment = float((top @ u) ** 2 / (u @ u))
    gap = float(vals[0] - vals[1]) if d > 1 else 0.0
    if d > 1 and gap < 0.01 * abs(vals[0]):
        logger.warning(f"top two eigenvalues {vals[0]:.6g}, {vals[1]:.6g} are within 1%")
    return EmpiricalSpectrum(eigenvalues=vals, top_vector=top, top_vector_alignment=min(alignment, 1.0), top_gap=gap)


def has_outlier(spectrum: EmpiricalSpectrum, edge: float, d: int) -> bool:
    return bool(spectrum.eigenvalues[0] > edge * (1 + OUTLIER_BUFFER * d ** (-2 / 3)))
