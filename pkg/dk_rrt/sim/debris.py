"""
Scripted debris motions evaluated analytically at any t >= 0.
"""
from dataclasses import dataclass
from typing import List, Tuple, Union

import numpy as np

from ..errors import InvalidInputError


def _vec3(value, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.shape != (3,) or not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} must be a finite 3-vector, got {value!r}")
    return arr


@dataclass(frozen=True, eq=False)
class Ballistic:
    p0: np.ndarray
    v0: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p0", _vec3(self.p0, "p0"))
        object.__setattr__(self, "v0", _vec3(self.v0, "v0"))

    def position(self, t: float) -> np.ndarray:
        return self.p0 + self.v0 * t

    def velocity(self, t: float) -> np.ndarray:
        return self.v0.copy()

    def acceleration(self, t: float) -> np.ndarray:
        return np.zeros(3)

    def ode(self, state: np.ndarray) -> np.ndarray:
        return np.concatenate([state[3:], np.zeros(3)])


@dataclass(frozen=True, eq=False)
class Sinusoidal:
    """center + amplitude * sin(rate * t + phase), per axis."""
    center: np.ndarray
    amplitude: np.ndarray
    rate: float
    phase: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "center", _vec3(self.center, "center"))
        object.__setattr__(self, "amplitude", _vec3(self.amplitude, "amplitude"))

    @property
    def period(self) -> float:
        return 2.0 * np.pi / abs(self.rate) if self.rate else np.inf

    def position(self, t: float) -> np.ndarray:
        return self.center + self.amplitude * np.sin(self.rate * t + self.phase)

    def velocity(self, t: float) -> np.ndarray:
        return self.amplitude * self.rate * np.cos(self.rate * t + self.phase)

    def acceleration(self, t: float) -> np.ndarray:
        return -self.amplitude * self.rate ** 2 * np.sin(self.rate * t + self.phase)

    def ode(self, state: np.ndarray) -> np.ndarray:
        return np.concatenate([state[3:], -self.rate ** 2 * (state[:3] - self.center)])


@dataclass(frozen=True, eq=False)
class Circular:
    """Circle of given radius about center in a plane parallel to xy."""
    center: np.ndarray
    radius: float
    rate: float
    phase: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "center", _vec3(self.center, "center"))
        if self.radius < 0:
            raise InvalidInputError(f"orbit radius must be non-negative, got {self.radius}")

    def position(self, t: float) -> np.ndarray:
        a = self.rate * t + self.phase
        return self.center + self.radius * np.array([np.cos(a), np.sin(a), 0.0])

    def velocity(self, t: float) -> np.ndarray:
        a = self.rate * t + self.phase
        return self.radius * self.rate * np.array([-np.sin(a), np.cos(a), 0.0])

    def acceleration(self, t: float) -> np.ndarray:
        a = self.rate * t + self.phase
        return -self.radius * self.rate ** 2 * np.array([np.cos(a), np.sin(a), 0.0])

    def ode(self, state: np.ndarray) -> np.ndarray:
        rel = state[:3] - self.center
        rel[2] = 0.0
        return np.concatenate([state[3:], -self.rate ** 2 * rel])


@dataclass(frozen=True, eq=False)
class Reversing:
    """Ballistic until t_reverse, then the same speed back along the line."""
    p0: np.ndarray
    v0: np.ndarray
    t_reverse: float

    def __post_init__(self):
        object.__setattr__(self, "p0", _vec3(self.p0, "p0"))
        object.__setattr__(self, "v0", _vec3(self.v0, "v0"))
        if self.t_reverse < 0:
            raise InvalidInputError("t_reverse must be non-negative")

    def position(self, t: float) -> np.ndarray:
        if t <= self.t_reverse:
            return self.p0 + self.v0 * t
        return self.p0 + self.v0 * (2.0 * self.t_reverse - t)

    def velocity(self, t: float) -> np.ndarray:
        return self.v0.copy() if t <= self.t_reverse else -self.v0

    def acceleration(self, t: float) -> np.ndarray:
        return np.zeros(3)


Motion = Union[Ballistic, Sinusoidal, Circular, Reversing]


@dataclass(frozen=True, eq=False)
class Obstacle:
    radius: float
    motion: Motion

    def __post_init__(self):
        if not self.radius > 0:
            raise InvalidInputError(f"obstacle radius must be positive, got {self.radius}")


@dataclass(frozen=True, eq=False)
class DebrisField:
    obstacles: Tuple[Obstacle, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "obstacles", tuple(self.obstacles))

    def __len__(self):
        return len(self.obstacles)

    @property
    def radii(self) -> np.ndarray:
        return np.array([o.radius for o in self.obstacles], dtype=np.float64)

    def centers(self, t: float) -> np.ndarray:
        """(n_obs, 3) centres at time t."""
        _check_time(t)
        if not self.obstacles:
            return np.zeros((0, 3))
        return np.stack([o.motion.position(t) for o in self.obstacles])

    def velocities(self, t: float) -> np.ndarray:
        _check_time(t)
        if not self.obstacles:
            return np.zeros((0, 3))
        return np.stack([o.motion.velocity(t) for o in self.obstacles])

    def accelerations(self, t: float) -> np.ndarray:
        _check_time(t)
        if not self.obstacles:
            return np.zeros((0, 3))
        return np.stack([o.motion.acceleration(t) for o in self.obstacles])


def _check_time(t: float):
    if not (np.isfinite(t) and t >= 0):
        raise InvalidInputError(f"debris time must be finite and >= 0, got {t}")


def debris_positions(field: DebrisField, t: float) -> List[Tuple[np.ndarray, float]]:
    """(centre, radius) for every obstacle at time t."""
    return [(c, r) for c, r in zip(field.centers(t), field.radii)]


def debris_states(field: DebrisField, t: float) -> np.ndarray:
    """Object-state vector [p_1, v_1, p_2, v_2, ...] at time t."""
    if not field.obstacles:
        return np.zeros(0)
    return np.hstack([field.centers(t), field.velocities(t)]).reshape(-1)
