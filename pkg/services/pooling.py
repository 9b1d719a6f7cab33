# ===============================================================
# services/pooling.py
# Positional correlation matrices, pooling weight constructors and
# the scalar functionals alpha = w'Rw, kappa = |w|^2, rho, snr.
# ===============================================================
import logging
from typing import Optional

import numpy as np

from core.errors import ConfigError, UnattainableError
from domain.models import CorrelationModel, PoolScalars, PoolWeights
from utils.numeric_utils import harmonic_numbers

logger = logging.getLogger(__name__)

EIGEN_TIE_TOL = 1e-10
ATTAINABLE_TOL = 1e-10


def correlation_matrix(model: CorrelationModel) -> np.ndarray:
    """Realized T x T matrix, read-only; all checks already ran when the model was built."""
    R = model.array
    R.setflags(write=False)
    return R


def rayleigh_quotient(x: np.ndarray, R: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    return float(x @ R @ x) / float(x @ x)


def top_eigenvalue(R: CorrelationModel) -> float:
    return float(np.linalg.eigvalsh(correlation_matrix(R))[-1])


def pool_scalars(w: PoolWeights, R: CorrelationModel, mu_norm: float = 0.0) -> PoolScalars:
    if w.T != R.T:
        raise ConfigError(f"dimension mismatch: {w.T} weights for a {R.T} x {R.T} correlation")
    v = w.array
    alpha = float(v @ correlation_matrix(R) @ v)
    kappa = float(v @ v)
    snr = alpha / kappa
    return PoolScalars(alpha=alpha, kappa=kappa, snr=snr, rho=snr * mu_norm**2)


def mean_weights(T: int) -> PoolWeights:
    if T < 1:
        raise ConfigError(f"T must be positive, got {T}")
    return PoolWeights(w=[1.0 / T] * T, label="mean")


def causal_weights(T: int) -> PoolWeights:
    """Column averages of uniform causal attention with the self-key masked out.

    w_1 = (1 + H_{T-1})/T and w_s = (H_{T-1} - H_{s-1})/T for s >= 2.
    """
    if T < 1:
        raise ConfigError(f"T must be positive, got {T}")
    if T == 1:
        return PoolWeights(w=[1.0], label="causal")
    H = harmonic_numbers(T - 1)
    w = np.empty(T)
    w[0] = (1.0 + H[T - 1]) / T
    w[1:] = (H[T - 1] - H[1:T]) / T
    return PoolWeights(w=w.tolist(), label="causal")


def causal_scalars_closed_form(T: int, L: int, mu_norm: float = 1.0) -> PoolScalars:
    if not 1 <= L <= T:
        raise ConfigError(f"L={L} must lie in [1, T={T}]")
    H = harmonic_numbers(T)
    h = H[T - 1]
    gap = h - H[L - 1]
    kappa = (2 * T - 1 + h) / T**2
    alpha = (L**2 + 2 * (T - L) + (2 * L * (L - 1) + 1) * gap + L * (L - 1) * gap**2) / T**2
    snr = alpha / kappa
    return PoolScalars(alpha=alpha, kappa=kappa, snr=snr, rho=snr * mu_norm**2)


def mean_scalars_closed_form(T: int, L: int, mu_norm: float = 1.0) -> PoolScalars:
    if not 1 <= L <= T:
        raise ConfigError(f"L={L} must lie in [1, T={T}]")
    alpha = (L**2 + T - L) / T**2
    kappa = 1.0 / T
    snr = alpha / kappa
    return PoolScalars(alpha=alpha, kappa=kappa, snr=snr, rho=snr * mu_norm**2)


def optimal_weights(R: CorrelationModel) -> PoolWeights:
    """Normalized projection of 1 onto the top eigenspace of R.

    For a simple top eigenvalue this is v_max / (1'v_max); under ties it is the
    maximizer with the smallest kappa.
    """
    vals, vecs = np.linalg.eigh(correlation_matrix(R))
    lam_max = float(vals[-1])
    tol = EIGEN_TIE_TOL * max(1.0, abs(lam_max))
    top = vecs[:, vals >= lam_max - tol]
    ones = np.ones(R.T)
    coords = top.T @ ones
    if np.linalg.norm(coords) <= ATTAINABLE_TOL * np.sqrt(R.T):
        raise UnattainableError(lam_max)
    if top.shape[1] > 1:
        logger.debug(f"top eigenvalue {lam_max} has multiplicity {top.shape[1]}")
    v = top @ coords
    # 1'v = |coords|^2 > 0, so the sign convention holds by construction
    w = v / float(ones @ v)
    return PoolWeights(w=w.tolist(), label="optimal")


def weights_for(strategy: str, R: CorrelationModel, given: Optional[PoolWeights] = None) -> PoolWeights:
    """Resolve a strategy name to concrete weights for R."""
    if strategy == "mean":
        return mean_weights(R.T)
    if strategy == "causal":
        return causal_weights(R.T)
    if strategy == "optimal":
        return optimal_weights(R)
    if strategy == "custom" and given is not None:
        return given
    raise ConfigError(f"no fixed weights for strategy '{strategy}'")
