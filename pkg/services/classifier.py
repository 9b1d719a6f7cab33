# ===============================================================
# services/classifier.py
# Ridge classification on pooled sequences, with fixed pooling weights
# or weights learned jointly with the ridge solution.
# ===============================================================
import logging
from typing import Dict, Iterable, Optional, Tuple

import numpy as np
from scipy.linalg import solve
from scipy.optimize import minimize
from scipy.special import softmax

from core.errors import ConfigError
from domain.models import CorrelationModel, Dataset, PoolWeights, SimConfig
from services.pooling import weights_for
from services.sim import embedded_sequences, generate
from utils.rng_utils import substream

logger = logging.getLogger(__name__)

LEARN_RESTARTS = 5
LEARN_MAXITER = 200


def train_size(N: int, split: float) -> int:
    n_train = int(round(split * N))
    if not 0 < n_train < N:
        raise ConfigError(f"split={split} leaves an empty train or test set for N={N}")
    return n_train


def pooled_rows(X: np.ndarray, w: np.ndarray) -> np.ndarray:
    """N x d feature rows sum_t w_t X_t."""
    return np.einsum("ntj,t->nj", X, w)


def ridge_fit(features: np.ndarray, y: np.ndarray, lambda_ridge: float) -> np.ndarray:
    """argmin (1/n)|y - F b|^2 + lambda |b|^2."""
    n, d = features.shape
    gram = features.T @ features + lambda_ridge * n * np.eye(d)
    return solve(gram, features.T @ y, assume_a="pos")


def accuracy(features: np.ndarray, y: np.ndarray, beta: np.ndarray) -> float:
    predictions = np.where(features @ beta >= 0, 1.0, -1.0)
    return float(np.mean(predictions == y))


def ridge_objective(phi: np.ndarray, X: np.ndarray, y: np.ndarray, lambda_ridge: float) -> Tuple[float, np.ndarray]:
    """Profiled ridge loss g(softmax(phi)) and its gradient in phi.

    The ridge optimum makes dL/dbeta vanish, so dg/dC is the partial derivative
    of the loss at fixed beta.
    """
    n = X.shape[0]
    w = softmax(phi)
    features = pooled_rows(X, w)
    beta = ridge_fit(features, y, lambda_ridge)
    residual = y - features @ beta
    loss = float(residual @ residual / n + lambda_ridge * beta @ beta)
    d_features = -(2.0 / n) * np.outer(residual, beta)
    grad_w = np.einsum("nj,ntj->t", d_features, X)
    grad_phi = w * (grad_w - grad_w @ w)
    return loss, grad_phi


def learn_weights(
    X: np.ndarray,
    y: np.ndarray,
    lambda_ridge: float,
    rng: np.random.Generator,
    restarts: int = LEARN_RESTARTS,
    maxiter: int = LEARN_MAXITER,
) -> Tuple[PoolWeights, float]:
    """Softmax-parameterized pooling weights minimizing the profiled ridge loss."""
    T = X.shape[1]
    starts = [np.zeros(T)] + [rng.standard_normal(T) for _ in range(restarts)]
    best_phi, best_loss = None, np.inf
    for k, phi0 in enumerate(starts):
        result = minimize(
            ridge_objective, phi0, args=(X, y, lambda_ridge),
            jac=True, method="L-BFGS-B", options={"maxiter": maxiter},
        )
        logger.debug(f"restart {k}: loss {result.fun:.6g} after {result.nit} iterations")
        if result.fun < best_loss:
            best_phi, best_loss = result.x, float(result.fun)
    w = softmax(best_phi)
    return PoolWeights(w=(w / w.sum()).tolist(), label="custom"), best_loss


def classify_dataset(
    data: Dataset,
    R: CorrelationModel,
    strategies: Iterable[str],
    lambda_ridge: float,
    split: float,
    rng: Optional[np.random.Generator] = None,
) -> Dict[str, Tuple[float, float]]:
    """(train_acc, test_acc) for each strategy on one shared dataset."""
    if data.y is None:
        raise ConfigError("classification needs labels; set label_prefix or use a prefix correlation")
    X = embedded_sequences(data)
    n_train = train_size(X.shape[0], split)
    X_train, X_test = X[:n_train], X[n_train:]
    y_train, y_test = data.y[:n_train], data.y[n_train:]

    scores = {}
    for strategy in strategies:
        if strategy == "learned":
            w, _ = learn_weights(X_train, y_train, lambda_ridge, rng or np.random.default_rng(0))
        else:
            w = weights_for(strategy, R)
        train_features = pooled_rows(X_train, w.array)
        beta = ridge_fit(train_features, y_train, lambda_ridge)
        scores[strategy] = (
            accuracy(train_features, y_train, beta),
            accuracy(pooled_rows(X_test, w.array), y_test, beta),
        )
    return scores


def classify(
    config: SimConfig, strategy: str, lambda_ridge: float = 1.0, split: float = 0.8, trial: int = 0
) -> Tuple[float, float]:
    """Train and test accuracy of ridge on sequences pooled by one strategy."""
    data = generate(config, trial)
    rng = substream(config.seed, trial, 1)
    return classify_dataset(data, config.R, [strategy], lambda_ridge, split, rng)[strategy]
