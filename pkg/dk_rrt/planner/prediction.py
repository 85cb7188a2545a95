"""
Obstacle predictions consumed by the planner: predicted centres over a
horizon with radii inflated by a growing uncertainty margin.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from ..config import HORIZON_STEPS, INFLATION_C0, INFLATION_C1
from ..errors import (DimensionMismatchError, DivergenceError, HorizonExceededError,
                      InvalidInputError)
from ..koopman.core import LiftedOperator, predict_rollout

logger = logging.getLogger(__name__)

# object state per obstacle: position then velocity
OBJECT_STATE_SIZE = 6
TIME_EPS = 1e-9


@dataclass(frozen=True)
class InflationSchedule:
    """Radius margin c0 + c1 * elapsed prediction time."""
    c0: float = INFLATION_C0
    c1: float = INFLATION_C1

    def __post_init__(self):
        if self.c0 < 0 or self.c1 < 0:
            raise InvalidInputError(f"inflation coefficients must be non-negative, got {self.c0}, {self.c1}")

    def margins(self, steps: int, dt: float) -> np.ndarray:
        return self.c0 + self.c1 * np.arange(steps + 1) * dt


@dataclass(frozen=True, eq=False)
class ObstaclePrediction:
    """
    centers[k] and radii[k] hold every obstacle at t0 + k * dt. A prediction
    with unbounded=True is constant in time and valid for any t >= t0.
    source is the operator version the prediction came from, -1 for none.
    """
    centers: np.ndarray
    radii: np.ndarray
    physical_radii: np.ndarray
    t0: float
    dt: float
    source: int = -1
    fallback: bool = False
    unbounded: bool = False

    def __post_init__(self):
        centers = np.asarray(self.centers, dtype=np.float64)
        phys = np.asarray(self.physical_radii, dtype=np.float64).reshape(-1)
        if centers.ndim != 3 or centers.shape[1:] != (phys.size, 3):
            raise DimensionMismatchError(f"centers must have shape (H+1, {phys.size}, 3), got {centers.shape}")
        radii = np.asarray(self.radii, dtype=np.float64).reshape(centers.shape[:2])
        if centers.shape[0] < 1:
            raise InvalidInputError("prediction needs at least the current step")
        if np.any(radii < phys[None, :] - 1e-12):
            raise InvalidInputError("inflated radius below the physical radius")
        if np.any(np.diff(radii, axis=0) < -1e-12):
            raise InvalidInputError("inflated radii must not shrink along the horizon")
        if not self.unbounded and not self.dt > 0:
            raise InvalidInputError(f"prediction dt must be positive, got {self.dt}")
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "radii", radii)
        object.__setattr__(self, "physical_radii", phys)

    @property
    def n_obstacles(self) -> int:
        return self.centers.shape[1]

    @property
    def horizon_steps(self) -> int:
        return self.centers.shape[0] - 1

    @property
    def t_end(self) -> float:
        if self.unbounded or self.n_obstacles == 0:
            return np.inf
        return self.t0 + self.horizon_steps * self.dt

    @classmethod
    def static(cls, centers: np.ndarray, radii: np.ndarray, t0: float = 0.0,
               margin: float = 0.0, source: int = -1) -> "ObstaclePrediction":
        """Obstacles frozen where they are, inflated by a constant margin."""
        radii = np.asarray(radii, dtype=np.float64)
        centers = np.asarray(centers, dtype=np.float64).reshape(1, radii.size, 3)
        return cls(centers=centers, radii=(radii + margin)[None, :], physical_radii=radii,
                   t0=t0, dt=0.0, source=source, unbounded=True)

    @classmethod
    def empty(cls, t0: float = 0.0) -> "ObstaclePrediction":
        return cls.static(np.zeros((0, 3)), np.zeros(0), t0)

    def at_times(self, ts) -> Tuple[np.ndarray, np.ndarray]:
        """
        Linearly interpolated centres and radii

        Returns:
            (len(ts), n_obs, 3) centres and (len(ts), n_obs) radii

        Raises:
            HorizonExceededError: for times before t0 or past the horizon
        """
        ts = np.atleast_1d(np.asarray(ts, dtype=np.float64))
        if np.any(ts < self.t0 - TIME_EPS) or np.any(ts > self.t_end + TIME_EPS):
            raise HorizonExceededError(
                f"times [{ts.min():.4f}, {ts.max():.4f}] outside prediction [{self.t0:.4f}, {self.t_end:.4f}]")
        if self.unbounded or self.horizon_steps == 0 or self.n_obstacles == 0:
            idx = np.zeros(ts.size, dtype=np.int64)
            return self.centers[idx], self.radii[idx]
        s = np.clip((ts - self.t0) / self.dt, 0.0, self.horizon_steps)
        k = np.minimum(np.floor(s).astype(np.int64), self.horizon_steps - 1)
        w = (s - k)[:, None]
        centers = (1.0 - w[:, :, None]) * self.centers[k] + w[:, :, None] * self.centers[k + 1]
        radii = (1.0 - w) * self.radii[k] + w * self.radii[k + 1]
        return centers, radii

    def at(self, t: float) -> Tuple[np.ndarray, np.ndarray]:
        centers, radii = self.at_times([t])
        return centers[0], radii[0]

    def max_boundary_speed(self) -> float:
        """Upper bound on how fast any inflated sphere surface moves, m/s."""
        if self.unbounded or self.horizon_steps == 0 or self.n_obstacles == 0:
            return 0.0
        moves = np.linalg.norm(np.diff(self.centers, axis=0), axis=2) + np.diff(self.radii, axis=0)
        return float(np.max(moves) / self.dt)


OperatorModel = Union[LiftedOperator, Sequence[LiftedOperator]]


def constant_velocity(current: np.ndarray, horizon_steps: int, dt: float) -> np.ndarray:
    """(H+1, n_obs, 3) centres extrapolated along the current velocities."""
    states = np.asarray(current, dtype=np.float64).reshape(-1, OBJECT_STATE_SIZE)
    k = np.arange(horizon_steps + 1, dtype=np.float64)[:, None, None]
    return states[None, :, :3] + k * dt * states[None, :, 3:]


def _rollout_centers(op: LiftedOperator, dictionary, state: np.ndarray, horizon_steps: int) -> np.ndarray:
    pred = predict_rollout(op, dictionary, state, k=horizon_steps)
    traj = np.vstack([state[None, :], pred]).reshape(horizon_steps + 1, -1, OBJECT_STATE_SIZE)
    return traj[:, :, :3]


def predict_obstacles(op: OperatorModel, dictionary, current, horizon_steps: int = HORIZON_STEPS,
                      inflation: Optional[InflationSchedule] = None, radii=None,
                      t0: float = 0.0) -> ObstaclePrediction:
    """
    Roll object states forward and inflate their radii

    Args:
        op: one operator over the stacked object state, or one per obstacle
        dictionary: the matching dictionary, or one per obstacle
        current: stacked object state [p_1, v_1, p_2, v_2, ...]
        horizon_steps: number of predicted steps, >= 1
        inflation: radius margin schedule
        radii: physical radii, one per obstacle
        t0: time of the current state

    Returns:
        ObstaclePrediction; fallback is set when a rollout diverged and the
        affected obstacles were extrapolated at constant velocity
    """
    if horizon_steps < 1:
        raise InvalidInputError(f"horizon_steps must be >= 1, got {horizon_steps}")
    inflation = inflation or InflationSchedule()
    current = np.asarray(current, dtype=np.float64).reshape(-1)
    if current.size % OBJECT_STATE_SIZE:
        raise DimensionMismatchError(f"object state size {current.size} is not a multiple of {OBJECT_STATE_SIZE}")
    n_obs = current.size // OBJECT_STATE_SIZE
    radii = np.asarray(radii, dtype=np.float64)
    if radii.shape != (n_obs,):
        raise DimensionMismatchError(f"expected {n_obs} radii, got {radii.shape}")

    per_obstacle = isinstance(op, (list, tuple))
    ops = list(op) if per_obstacle else [op]
    dicts = list(dictionary) if per_obstacle else [dictionary]
    if len(ops) != len(dicts):
        raise DimensionMismatchError(f"{len(ops)} operators but {len(dicts)} dictionaries")
    if per_obstacle and len(ops) != n_obs:
        raise DimensionMismatchError(f"{len(ops)} operators for {n_obs} obstacles")
    dt = ops[0].dt
    if any(not np.isclose(o.dt, dt, rtol=1e-9, atol=0.0) for o in ops):
        raise InvalidInputError("all obstacle operators must share one dt")

    centers = np.empty((horizon_steps + 1, n_obs, 3))
    fallback = False
    blocks = [slice(i * OBJECT_STATE_SIZE, (i + 1) * OBJECT_STATE_SIZE) for i in range(n_obs)] \
        if per_obstacle else [slice(0, current.size)]
    for i, (o, d, block) in enumerate(zip(ops, dicts, blocks)):
        cols = slice(i, i + 1) if per_obstacle else slice(0, n_obs)
        try:
            centers[:, cols] = _rollout_centers(o, d, current[block], horizon_steps)
        except DivergenceError as e:
            logger.warning(f"--> Obstacle prediction diverged at step {e.step}; using constant velocity")
            centers[:, cols] = constant_velocity(current[block], horizon_steps, dt)
            fallback = True

    margins = inflation.margins(horizon_steps, dt)
    inflated = radii[None, :] + margins[:, None]
    return ObstaclePrediction(centers=centers, radii=inflated, physical_radii=radii, t0=t0, dt=dt,
                              source=max(o.version for o in ops), fallback=fallback)
