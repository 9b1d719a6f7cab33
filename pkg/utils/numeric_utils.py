# utils/numeric_utils.py
import math
from typing import Tuple

import numpy as np


def harmonic_numbers(n: int) -> np.ndarray:
    """Return H_0..H_n with Neumaier-compensated accumulation (H_0 = 0)."""
    if n < 0:
        raise ValueError(f"harmonic_numbers needs n >= 0, got {n}")
    out = np.zeros(n + 1)
    total, comp = 0.0, 0.0
    for k in range(1, n + 1):
        term = 1.0 / k
        t = total + term
        if abs(total) >= abs(term):
            comp += (total - t) + term
        else:
            comp += (term - t) + total
        total = t
        out[k] = total + comp
    return out


def stable_quadratic_roots(a: float, b: float, c: float) -> Tuple[float, float]:
    """Real roots of a x^2 + b x + c without cancellation; caller guarantees disc >= 0."""
    disc = max(b * b - 4.0 * a * c, 0.0)
    q = -0.5 * (b + math.copysign(math.sqrt(disc), b))
    if q == 0.0:
        return 0.0, 0.0
    r1, r2 = q / a, c / q
    return (r1, r2) if r1 <= r2 else (r2, r1)
