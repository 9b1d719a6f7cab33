# ===============================================================
# services/bulk.py
# Limiting bulk law of the pooled sample covariance: the Stieltjes
# cubic, its analytic branch, the density, and the support edges.
# ===============================================================
import cmath
import logging
import math
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np

from core.errors import BranchError, ConsistencyError
from domain.models import BulkLaw, BulkParams, StieltjesValue

logger = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-10
ARCCOS_SLACK = 1e-9
REAL_AXIS_TOL = 1e-8
SMALL_Q = 1e-6
EDGE_RESIDUAL_TOL = 1e-9
HOMOTOPY_STEPS = 96
DEFAULT_GRID_POINTS = 2048
DEFAULT_GRID_SPAN = 1.15


# ========== The Stieltjes Cubic ==========
def cubic_coefficients(params: BulkParams, z: complex) -> np.ndarray:
    """Coefficients of P(m; z), highest degree first; quadratic when delta = 0."""
    d, g, k = params.delta, params.gamma, params.kappa
    coeffs = [d * g * k * z * z, -k * z * (d + g - 2 * d * g), -(z + k * (d - 1) * (1 - g)), -1.0]
    if d == 0:
        coeffs = coeffs[1:]
    return np.asarray(coeffs, dtype=complex)


def cubic_value(params: BulkParams, m: complex, z: complex) -> complex:
    d, g, k = params.delta, params.gamma, params.kappa
    return d * g * k * z * z * m**3 - k * z * (d + g - 2 * d * g) * m**2 - (z + k * (d - 1) * (1 - g)) * m - 1.0


def cubic_dm(params: BulkParams, m: complex, z: complex) -> complex:
    d, g, k = params.delta, params.gamma, params.kappa
    return 3 * d * g * k * z * z * m**2 - 2 * k * z * (d + g - 2 * d * g) * m - (z + k * (d - 1) * (1 - g))


def cubic_dz(params: BulkParams, m: complex, z: complex) -> complex:
    d, g, k = params.delta, params.gamma, params.kappa
    return 2 * d * g * k * z * m**3 - k * (d + g - 2 * d * g) * m**2 - m


def _term_scale(params: BulkParams, m: complex, z: complex) -> float:
    d, g, k = params.delta, params.gamma, params.kappa
    return (abs(d * g * k * z * z * m**3) + abs(k * z * (d + g - 2 * d * g) * m**2)
            + abs((z + k * (d - 1) * (1 - g)) * m) + 1.0)


def _slope_scale(params: BulkParams, m: complex, z: complex) -> float:
    d, g, k = params.delta, params.gamma, params.kappa
    return (abs(3 * d * g * k * z * z * m**2) + abs(2 * k * z * (d + g - 2 * d * g) * m)
            + abs(z + k * (d - 1) * (1 - g)))


def companion(params: BulkParams, m: complex, z: complex) -> complex:
    return -(1 - params.gamma) / z + params.gamma * m


# ========== Support Edges ==========
def discriminant_coefficients(delta: float, gamma: float, kappa: float = 1.0) -> np.ndarray:
    """Coefficients in z of the cubic whose zeros are the candidate support edges."""
    s, q = delta + gamma, delta * gamma
    r0 = s + q
    a3 = 4 * q
    a2 = r0 * r0 - 12 * q * r0 + 12 * q * q - 12 * q
    a1 = -2 * (s**3 + s**2 - 4 * q * s**2 + q * q * s - q * s + 10 * q * q - 6 * q)
    a0 = (q - s + 1) ** 2 * (s * s - 4 * q)
    return np.array([a3, a2 * kappa, a1 * kappa**2, a0 * kappa**3])


@lru_cache(maxsize=4096)
def _unit_edge_roots(delta: float, gamma: float) -> Tuple[float, float, float]:
    q = delta * gamma
    poly = discriminant_coefficients(delta, gamma)
    if q < SMALL_Q:
        # the trigonometric form divides by 12q; companion-matrix roots keep their precision
        raw = np.roots(poly)
        if np.any(np.abs(raw.imag) > REAL_AXIS_TOL * np.maximum(1.0, np.abs(raw))):
            raise ConsistencyError(
                "discriminant cubic has complex roots",
                {"delta": delta, "gamma": gamma, "roots": [[r.real, r.imag] for r in raw]},
            )
        roots = [float(r.real) for r in raw]
    else:
        r0 = delta + gamma + q
        lead = r0 * r0 - 12 * q * r0 + 12 * q * q - 12 * q
        d0 = r0 * (r0**3 + 216 * q * q)
        d1 = 2 * (r0**6 - 540 * q * q * r0**3 - 5832 * q**4)
        arg = d1 / (2 * d0**1.5)
        if abs(arg) > 1 + ARCCOS_SLACK:
            raise ConsistencyError(
                f"edge formula out of range: arccos argument {arg!r}",
                {"delta": delta, "gamma": gamma, "delta0": d0, "delta1": d1},
            )
        phi = math.acos(min(1.0, max(-1.0, arg)))
        roots = [-(lead + 2 * math.sqrt(d0) * math.cos((phi + 2 * math.pi * k) / 3)) / (12 * q) for k in range(3)]
    return tuple(_newton_polish(poly, r) for r in roots)


def _newton_polish(poly: np.ndarray, x: float, steps: int = 8) -> float:
    deriv = np.polyder(poly)
    for _ in range(steps):
        fx, dfx = np.polyval(poly, x), np.polyval(deriv, x)
        if fx == 0 or dfx == 0:
            break
        candidate = x - fx / dfx
        if abs(np.polyval(poly, candidate)) >= abs(fx):
            break
        x = float(candidate)
    return float(x)


def bulk_edge(params: BulkParams) -> Tuple[float, Tuple[float, float, float]]:
    """Right support edge and the three candidate roots (before kappa scaling).

    delta = 0 short-circuits to the Marchenko-Pastur edges ((1+sqrt g)^2, (1-sqrt g)^2, 0).
    """
    if params.delta == 0:
        sg = math.sqrt(params.gamma)
        roots = ((1 + sg) ** 2, (1 - sg) ** 2, 0.0)
        return params.kappa * roots[0], roots
    roots = _unit_edge_roots(params.delta, params.gamma)
    return params.kappa * max(roots), roots


def left_edge(params: BulkParams) -> float:
    if params.delta == 0:
        return params.kappa * (1 - math.sqrt(params.gamma)) ** 2 if params.gamma < 1 else 0.0
    if params.delta < 1 and params.gamma < 1:
        ordered = sorted(_unit_edge_roots(params.delta, params.gamma))
        return params.kappa * ordered[1] if ordered[1] > 0 else 0.0
    return 0.0


def point_mass_at_zero(params: BulkParams) -> float:
    """Atom of the bulk law at zero: the larger of the two factor atoms."""
    atoms = [0.0, 1 - 1 / params.gamma]
    if params.delta > 0:
        atoms.append(1 - 1 / params.delta)
    return max(atoms)


# ========== Branch Selection ==========
def _roots(params: BulkParams, z: complex) -> np.ndarray:
    return np.roots(cubic_coefficients(params, z))


def _nearest(roots: np.ndarray, target: complex) -> complex:
    return complex(roots[int(np.argmin(np.abs(roots - target)))])


def _real_window(x: float, edge: float) -> Optional[Tuple[float, float]]:
    if x > edge:
        return -1.0 / (x - edge), -1.0 / x
    if x < 0:
        return 1.0 / (edge - x), -1.0 / x
    return None


def _homotopy(params: BulkParams, z: complex, edge: float) -> complex:
    scale = max(1.0, edge, abs(z.real))
    top = 10.0 * scale + z.imag
    bottom = z.imag if z.imag > 0 else 1e-13 * scale
    start = complex(z.real, top)
    roots = _roots(params, start)
    upper = roots[roots.imag > 0]
    m = _nearest(upper if upper.size else roots, -1.0 / start)
    for y in np.geomspace(top, bottom, HOMOTOPY_STEPS)[1:]:
        m = _nearest(_roots(params, complex(z.real, y)), m)
    if z.imag == 0:
        m = _nearest(_roots(params, z), m)
    return m


def _select_branch(params: BulkParams, z: complex, edge: float) -> complex:
    roots = _roots(params, z)
    if z.imag > 0:
        upper = roots[roots.imag > 0]
        if upper.size == 1:
            return complex(upper[0])
    else:
        window = _real_window(z.real, edge)
        if window is not None:
            lo, hi = window
            slack = 1e-9 * max(abs(lo), abs(hi))
            real = roots[np.abs(roots.imag) <= REAL_AXIS_TOL * np.maximum(1.0, np.abs(roots))]
            inside = real[(real.real >= lo - slack) & (real.real <= hi + slack)]
            if inside.size == 1:
                return complex(inside[0].real)
    logger.debug(f"branch ambiguous at z={z}, following homotopy from the upper half plane")
    return _homotopy(params, z, edge)


def _polish(params: BulkParams, m: complex, z: complex) -> complex:
    for _ in range(3):
        f, df = cubic_value(params, m, z), cubic_dm(params, m, z)
        if df == 0:
            break
        candidate = m - f / df
        if abs(cubic_value(params, candidate, z)) >= abs(f):
            break
        m = candidate
    return m


def stieltjes(params: BulkParams, z: complex, with_derivative: bool = True) -> StieltjesValue:
    """Stieltjes transform of the bulk law on its analytic (Herglotz) branch."""
    z = complex(z)
    if z == 0:
        raise ValueError("the Stieltjes transform is not evaluated at z = 0")
    if z.imag < 0:
        value = stieltjes(params, z.conjugate(), with_derivative)
        return StieltjesValue(
            z=z,
            m=value.m.conjugate(),
            m_companion=value.m_companion.conjugate(),
            m_prime=None if value.m_prime is None else value.m_prime.conjugate(),
            branch_ok=value.branch_ok,
        )
    edge, _ = bulk_edge(params)
    if z.imag == 0 and left_edge(params) <= z.real <= edge:
        raise ValueError(f"real z={z.real} lies inside the support [.., {edge}]")

    m = _polish(params, _select_branch(params, z, edge), z)
    if z.imag == 0:
        if abs(m.imag) > REAL_AXIS_TOL * max(1.0, abs(m)):
            raise ValueError(f"real z={z.real} lies inside the support (Im m = {m.imag:.3e})")
        m = complex(m.real, 0.0)

    residual = abs(cubic_value(params, m, z))
    if residual > RESIDUAL_TOL * _term_scale(params, m, z):
        raise BranchError(
            f"cubic residual {residual:.3e} at z={z}",
            {"z": [z.real, z.imag], "roots": [[r.real, r.imag] for r in _roots(params, z)]},
        )
    branch_ok = z.imag == 0 or m.imag >= 0
    if not branch_ok:
        raise BranchError(
            f"selected root has Im m = {m.imag:.3e} < 0 at z={z}",
            {"z": [z.real, z.imag], "roots": [[r.real, r.imag] for r in _roots(params, z)]},
        )

    m_prime = None
    if with_derivative:
        dm = cubic_dm(params, m, z)
        m_prime = -cubic_dz(params, m, z) / dm if dm != 0 else None
    return StieltjesValue(z=z, m=m, m_companion=companion(params, m, z), m_prime=m_prime, branch_ok=branch_ok)


# ========== Density ==========
def default_grid(params: BulkParams, points: int = DEFAULT_GRID_POINTS) -> np.ndarray:
    edge, _ = bulk_edge(params)
    return np.linspace(0.0, DEFAULT_GRID_SPAN * edge, points)


def default_eta(params: BulkParams) -> float:
    edge, _ = bulk_edge(params)
    return 1e-6 * max(1.0, edge)


def density(params: BulkParams, grid: Optional[np.ndarray] = None, eta: Optional[float] = None) -> BulkLaw:
    edge, roots = bulk_edge(params)
    grid = default_grid(params) if grid is None else np.asarray(grid, dtype=float)
    eta = default_eta(params) if eta is None else float(eta)
    if eta <= 0:
        raise ValueError(f"eta must be positive, got {eta}")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("density grid must be strictly ascending")

    values = np.zeros_like(grid)
    valid = np.ones(grid.shape, dtype=bool)
    for i, x in enumerate(grid):
        try:
            values[i] = stieltjes(params, complex(x, eta), with_derivative=False).m.imag / math.pi
        except (BranchError, ValueError) as e:
            valid[i] = False
            logger.warning(f"density point x={x} skipped: {e}")
    return BulkLaw(
        params=params,
        grid=grid,
        density=np.maximum(values, 0.0),
        valid=valid,
        eta=eta,
        edge_right=edge,
        edge_left=left_edge(params),
        edge_roots=roots,
    )


# ========== Edge Double Root ==========
def edge_stieltjes(params: BulkParams) -> Tuple[float, float]:
    """Double root of the cubic at the right edge and its companion value."""
    edge, _ = bulk_edge(params)
    g, k = params.gamma, params.kappa
    if params.delta == 0:
        sg = math.sqrt(g)
        m_edge = -1.0 / (k * sg * (1 + sg))
        return m_edge, -1.0 / (k * (1 + sg))
    a, b, c, d = (float(v.real) for v in cubic_coefficients(params, edge))
    spread = b * b - 3 * a * c
    m_edge = (9 * a * d - b * c) / (2 * spread) if spread != 0 else math.nan
    value_residual = abs(cubic_value(params, m_edge, edge)) / _term_scale(params, m_edge, edge)
    slope_residual = abs(cubic_dm(params, m_edge, edge)) / _slope_scale(params, m_edge, edge)
    if not max(value_residual, slope_residual) <= EDGE_RESIDUAL_TOL:
        roots = np.roots([a, b, c, d])
        raise ConsistencyError(
            f"no double root at the edge {edge!r} (residuals {value_residual:.3e}, {slope_residual:.3e})",
            {"params": params.model_dump(), "roots": [[r.real, r.imag] for r in roots]},
        )
    return m_edge, float(companion(params, m_edge, edge).real)


def critical_spike(params: BulkParams) -> float:
    """Sample-level threshold beta_crit = -1 / m_companion(edge)."""
    _, m_bar = edge_stieltjes(params)
    return -1.0 / m_bar


# ========== Marchenko-Pastur Reference ==========
def mp_stieltjes(z: complex, gamma: float, kappa: float = 1.0) -> complex:
    x = complex(z) / kappa
    sg = math.sqrt(gamma)
    root = cmath.sqrt(x - (1 - sg) ** 2) * cmath.sqrt(x - (1 + sg) ** 2)
    return (-(x + gamma - 1) + root) / (2 * gamma * x) / kappa


def mp_density(grid: np.ndarray, gamma: float, kappa: float = 1.0) -> np.ndarray:
    x = np.asarray(grid, dtype=float) / kappa
    sg = math.sqrt(gamma)
    lo, hi = (1 - sg) ** 2, (1 + sg) ** 2
    inside = np.clip((hi - x) * (x - lo), 0.0, None)
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = np.where(x > 0, np.sqrt(inside) / (2 * math.pi * gamma * x), 0.0)
    return rho / kappa
