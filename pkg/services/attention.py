# ===============================================================
# services/attention.py
# Parameter-free causal softmax attention over embedded sequences and
# the study of how fast its pooled weights settle on the harmonic limit.
# ===============================================================
import logging
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.special import softmax

from core.errors import ConfigError
from domain.models import CorrelationModel, Dataset
from services.pooling import causal_weights
from services.sim import draw_noise, embedded_sequences, sample_signs, sample_tokens
from utils.parallel_utils import run_ordered
from utils.rng_utils import substream

logger = logging.getLogger(__name__)

DEFAULT_D_GRID = (200, 400, 800, 1600, 3200)


def admissible_mask(T: int) -> np.ndarray:
    """Keys s < t for query t, plus the forced (0, 0) entry of the first row."""
    mask = np.tril(np.ones((T, T), dtype=bool), k=-1)
    mask[0, 0] = True
    return mask


def attention_matrices(X: np.ndarray, tau: float) -> np.ndarray:
    """Row-stochastic N x T x T attention with scores (tau/d) <X_t, X_s>."""
    if X.ndim != 3:
        raise ConfigError(f"expected an N x T x d array of sequences, got shape {X.shape}")
    _, T, d = X.shape
    mask = admissible_mask(T)
    scores = (tau / d) * np.einsum("ntj,nsj->nts", X, X)
    scores = np.where(mask, scores, -np.inf)
    scores[:, 0, 0] = 0.0
    return softmax(scores, axis=-1)


def causal_attention_weights(X: np.ndarray, tau: float) -> np.ndarray:
    """Per-sequence pooled weights: column sums of the attention matrix over T."""
    A = attention_matrices(X, tau)
    return A.sum(axis=1) / X.shape[1]


def empirical_causal_attention(data: Dataset, tau: float) -> Tuple[np.ndarray, float]:
    """(w_att, mean distance of w_att from the harmonic causal weights)."""
    if tau < 0:
        raise ConfigError(f"tau must be nonnegative, got {tau}")
    w_att = causal_attention_weights(embedded_sequences(data), tau)
    w0 = causal_weights(w_att.shape[1]).array
    deviation = float(np.linalg.norm(w_att - w0, axis=1).mean())
    return w_att, deviation


def sample_embedded_sequences(
    d: int, V: int, N: int, R: CorrelationModel, mu_norm: float, noise_kind: str, rng: np.random.Generator
) -> np.ndarray:
    """N x T x d sequences drawing only the embedding columns that are actually used."""
    xi = sample_signs(R, N, rng)
    tokens = sample_tokens(xi, V, rng)
    used, inverse = np.unique(tokens, return_inverse=True)
    Z = draw_noise(rng, noise_kind, (used.size, d))
    X = Z[inverse.reshape(tokens.shape)]
    X[..., 0] += xi * mu_norm
    return X


def _deviations(job) -> np.ndarray:
    d, V, n_sequences, R, mu_norm, noise_kind, tau, seed, index, trial = job
    rng = substream(seed, index, trial)
    X = sample_embedded_sequences(d, V, n_sequences, R, mu_norm, noise_kind, rng)
    w0 = causal_weights(R.T).array
    return np.linalg.norm(causal_attention_weights(X, tau) - w0, axis=1)


def attention_concentration(
    d_grid=DEFAULT_D_GRID,
    T: int = 10,
    tau: float = 1.0,
    n_sequences: int = 300,
    trials: int = 1,
    seed: int = 0,
    mu_norm: float = 1.0,
    vocab_factor: int = 64,
    R: Optional[CorrelationModel] = None,
    noise_kind: str = "gaussian",
    threads: Optional[int] = None,
) -> Tuple[pd.DataFrame, float]:
    """Mean deviation of attention weights from w0 per d, and the log-log slope."""
    d_grid: List[int] = [int(d) for d in d_grid]
    if len(d_grid) < 2:
        raise ConfigError("the concentration study needs at least two values of d")
    R = R or CorrelationModel.prefix(min(3, T), T)
    if R.T != T:
        raise ConfigError(f"correlation has T={R.T}, study uses T={T}")

    jobs = [
        (d, 2 * ((vocab_factor * d + 1) // 2), n_sequences, R, mu_norm, noise_kind, tau, seed, i, trial)
        for i, d in enumerate(d_grid)
        for trial in range(trials)
    ]
    results = run_ordered(_deviations, jobs, threads)

    rows = []
    for i, d in enumerate(d_grid):
        pooled = np.concatenate(results[i * trials:(i + 1) * trials])
        rows.append({
            "d": d,
            "deviation_mc": float(pooled.mean()),
            "deviation_se": float(pooled.std(ddof=1) / np.sqrt(pooled.size)),
            "n_trials": trials,
        })
        logger.info(f"attention concentration d={d}: deviation {rows[-1]['deviation_mc']:.4g}")
    frame = pd.DataFrame(rows)
    slope = float(np.polyfit(np.log(frame["d"]), np.log(frame["deviation_mc"]), 1)[0])
    return frame, slope
