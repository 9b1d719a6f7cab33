# ===============================================================
# services/spike.py
# Outlier theory: population and sample BBP transitions, eigenvector
# overlaps, total alignment and the two signal-strength thresholds.
# ===============================================================
import logging
import math
from typing import Optional, Tuple

from core.errors import ConfigError, ConsistencyError
from domain.models import BulkParams, CorrelationModel, PoolScalars, PoolWeights, SpikeReport
from services.bulk import bulk_edge, critical_spike, cubic_dm, cubic_dz, stieltjes
from services.pooling import pool_scalars
from utils.numeric_utils import stable_quadratic_roots

logger = logging.getLogger(__name__)

NEAR_THRESHOLD = 1e-8
BRANCH_POINT_TOL = 1e-12
CLAMP_SLACK = 1e-9
COMPANION_TOL = 1e-8


def population_spike(rho: float, delta: float, kappa: float) -> Tuple[Optional[float], float]:
    """Population outlier beta_out and overlap |u_Sigma' u|^2."""
    if rho < 0 or delta < 0 or kappa <= 0:
        raise ConfigError(f"population_spike needs rho >= 0, delta >= 0, kappa > 0 (got {rho}, {delta}, {kappa})")
    if rho <= delta + math.sqrt(delta):
        return None, 0.0
    gap = rho - delta
    beta_out = kappa * rho * (gap + 1) / gap
    return beta_out, max(0.0, 1.0 - delta / gap**2)


def companion_residual(lambda_out: float, beta: float, params: BulkParams) -> float:
    """|m_companion(lambda) + 1/beta| on the analytic branch."""
    value = stieltjes(params, complex(lambda_out, 0.0), with_derivative=False)
    return abs(value.m_companion.real + 1.0 / beta)


def _outlier_quadratic(beta: float, params: BulkParams) -> Tuple[float, float, float]:
    d, g, k = params.delta, params.gamma, params.kappa
    a = d * k
    b = -beta * beta * g + beta * k * (g * (1 + d) - 2 * d)
    c = beta * beta * (beta * g + k * (1 - g) * (d - g))
    return a, b, c


def sample_spike(beta: float, delta: float, gamma: float, kappa: float) -> Optional[float]:
    """Location of the sample outlier, or None below the sample threshold.

    Candidate roots of the outlier quadratic are kept only when they sit right of the
    bulk and solve m_companion(lambda) = -1/beta on the physical branch.
    """
    params = BulkParams(delta=delta, gamma=gamma, kappa=kappa)
    floor = kappa * (1 + math.sqrt(delta)) ** 2
    if beta <= floor:
        raise ConfigError(f"beta={beta} is not a population outlier (needs > {floor})")
    beta_crit = critical_spike(params)
    if beta <= beta_crit * (1 + NEAR_THRESHOLD):
        return None

    a, b, c = _outlier_quadratic(beta, params)
    if a == 0:
        candidates: Tuple[float, ...] = (-c / b,)
    else:
        disc = b * b - 4 * a * c
        if disc < -1e-12 * b * b:
            raise ConsistencyError(
                f"outlier quadratic has negative discriminant {disc!r} above threshold",
                {"a": a, "b": b, "c": c, "beta": beta, "beta_crit": beta_crit},
            )
        candidates = stable_quadratic_roots(a, b, c)

    edge, _ = bulk_edge(params)
    accepted, residuals = [], {}
    for lam in candidates:
        if lam <= edge:
            continue
        m_out = (1 - gamma) / (gamma * lam) - 1 / (gamma * beta)
        lo, hi = -1 / (lam - edge), -1 / lam
        slack = 1e-12 * abs(lo)
        if not lo - slack <= m_out <= hi + slack:
            residuals[lam] = math.inf
            continue
        try:
            residuals[lam] = companion_residual(lam, beta, params)
        except ValueError as e:
            logger.warning(f"companion check failed at lambda={lam}: {e}")
            residuals[lam] = math.inf
            continue
        if residuals[lam] <= COMPANION_TOL * max(1.0, 1.0 / beta):
            accepted.append(lam)

    if not accepted:
        raise ConsistencyError(
            f"no outlier root satisfies the companion equation for beta={beta}",
            {"roots": list(candidates), "residuals": [residuals.get(r) for r in candidates],
             "edge": edge, "beta_crit": beta_crit},
        )
    return max(accepted)


def sample_overlap(beta: float, lambda_out: float, delta: float, gamma: float, kappa: float) -> Tuple[float, bool]:
    """Overlap |u_S' u_Sigma|^2 = 1 / (beta * lambda * m_companion'(lambda)) and a clamp flag."""
    params = BulkParams(delta=delta, gamma=gamma, kappa=kappa)
    m_out = (1 - gamma) / (gamma * lambda_out) - 1 / (gamma * beta)
    f_m = cubic_dm(params, m_out, lambda_out)
    if abs(f_m) <= BRANCH_POINT_TOL:
        raise ConsistencyError(
            f"dF/dm vanishes at lambda={lambda_out}: evaluation at a branch point",
            {"beta": beta, "lambda_out": lambda_out, "m_out": m_out},
        )
    m_prime = -cubic_dz(params, m_out, lambda_out) / f_m
    m_bar_prime = (1 - gamma) / lambda_out**2 + gamma * m_prime
    overlap = 1.0 / (beta * lambda_out * m_bar_prime)

    if 0.0 <= overlap <= 1.0:
        return overlap, False
    if -CLAMP_SLACK < overlap < 1.0 + CLAMP_SLACK:
        logger.warning(f"sample overlap {overlap!r} clamped into [0, 1]")
        return min(1.0, max(0.0, overlap)), True
    raise ConsistencyError(
        f"sample overlap {overlap!r} outside [0, 1]",
        {"beta": beta, "lambda_out": lambda_out, "m_out": m_out, "m_bar_prime": m_bar_prime},
    )


def total_alignment(rho: float, delta: float, gamma: float, kappa: float) -> float:
    return _outlier_chain(rho, BulkParams(delta=delta, gamma=gamma, kappa=kappa))["total"]


def _outlier_chain(rho: float, params: BulkParams) -> dict:
    d, k = params.delta, params.kappa
    beta_out, pop = population_spike(rho, d, k)
    chain = {"beta_out": beta_out, "pop": pop, "lambda_out": None, "sample": 0.0, "total": 0.0, "clamped": False}
    if beta_out is None or beta_out <= k * (1 + math.sqrt(d)) ** 2:
        return chain
    lambda_out = sample_spike(beta_out, d, params.gamma, k)
    if lambda_out is None:
        return chain
    sample, clamped = sample_overlap(beta_out, lambda_out, d, params.gamma, k)
    chain.update(lambda_out=lambda_out, sample=sample, total=sample * pop, clamped=clamped)
    return chain


def threshold_pair(snr: float, kappa: float, delta: float, gamma: float) -> Tuple[float, float]:
    """(mu_pop, mu_samp) for pooling with the given alpha/kappa and kappa."""
    if snr <= 0:
        raise ConfigError(f"thresholds need alpha > 0 (alpha/kappa = {snr})")
    barrier = delta + math.sqrt(delta)
    mu_pop = math.sqrt(barrier / snr)
    beta_crit = critical_spike(BulkParams(delta=delta, gamma=gamma, kappa=kappa))
    b = kappa * (1 - delta) - beta_crit
    c = beta_crit * delta
    disc = b * b - 4 * kappa * c
    if disc < 0:
        raise ConsistencyError(
            f"threshold quadratic has negative discriminant {disc!r}",
            {"kappa": kappa, "b": b, "c": c, "beta_crit": beta_crit},
        )
    roots = [r for r in stable_quadratic_roots(kappa, b, c) if r > barrier]
    if not roots:
        raise ConsistencyError(
            f"no threshold root exceeds the population barrier {barrier}",
            {"roots": list(stable_quadratic_roots(kappa, b, c)), "beta_crit": beta_crit},
        )
    return mu_pop, math.sqrt(max(roots) / snr)


def thresholds(w: PoolWeights, R: CorrelationModel, delta: float, gamma: float) -> Tuple[float, float]:
    scalars = pool_scalars(w, R)
    return threshold_pair(scalars.snr, scalars.kappa, delta, gamma)


def spike_report(scalars: PoolScalars, delta: float, gamma: float) -> SpikeReport:
    params = BulkParams(delta=delta, gamma=gamma, kappa=scalars.kappa)
    chain = _outlier_chain(scalars.rho, params)
    mu_pop, mu_samp = threshold_pair(scalars.snr, scalars.kappa, delta, gamma)
    if chain["beta_out"] is None:
        regime = "subcritical_pop"
    elif chain["lambda_out"] is None:
        regime = "subcritical_sample"
    else:
        regime = "supercritical"
    return SpikeReport(
        rho=scalars.rho,
        beta_out=chain["beta_out"],
        pop_overlap=chain["pop"],
        beta_crit=critical_spike(params),
        lambda_out=chain["lambda_out"],
        sample_overlap=chain["sample"],
        total_alignment=chain["total"],
        mu_pop=mu_pop,
        mu_samp=mu_samp,
        regime=regime,
        clamped=chain["clamped"],
    )


def analyze(w: PoolWeights, R: CorrelationModel, mu_norm: float, delta: float, gamma: float) -> SpikeReport:
    """Full outlier report for one (weights, correlation) pair."""
    return spike_report(pool_scalars(w, R, mu_norm), delta, gamma)
