from typing import Callable

import numpy as np

from ..config import DIVERGENCE_BOUND
from ..errors import DivergenceError

VectorField = Callable[[float, np.ndarray], np.ndarray]


def rk4_step(f: VectorField, t: float, y: np.ndarray, h: float) -> np.ndarray:
    """One classical fourth-order Runge-Kutta step."""
    k1 = f(t, y)
    k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = f(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_integrate(f: VectorField, y0: np.ndarray, t0: float, h: float, steps: int,
                  bound: float = DIVERGENCE_BOUND) -> np.ndarray:
    """
    Fixed-step RK4

    Returns:
        (steps + 1, dim) states including y0

    Raises:
        DivergenceError: when the state leaves the bound or turns non-finite
    """
    y = np.asarray(y0, dtype=np.float64)
    out = np.empty((steps + 1, y.size))
    out[0] = y
    for k in range(steps):
        y = rk4_step(f, t0 + k * h, y, h)
        if not np.all(np.isfinite(y)) or np.linalg.norm(y) > bound:
            raise DivergenceError(k + 1, f"Integration diverged at step {k + 1}")
        out[k + 1] = y
    return out
