"""
Synthetic observation renderer: orthographic occupancy grid of the debris
field with seeded Gaussian pixel noise.
"""
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
from einops import rearrange
from PIL import Image

from ..config import OBSERVATION_EXTENT, OBSERVATION_GRID, OBSERVATION_NOISE
from ..errors import InvalidInputError
from ..utils import create_visualization
from .debris import DebrisField

PLANES = {"xy": (0, 1), "xz": (0, 2), "yz": (1, 2)}


@dataclass(frozen=True)
class ObservationSpec:
    grid: Tuple[int, int] = OBSERVATION_GRID
    plane: str = "xy"
    center: Tuple[float, float] = (0.0, 0.0)
    extent: float = OBSERVATION_EXTENT
    noise_sigma: float = OBSERVATION_NOISE
    seed: int = 0

    def __post_init__(self):
        rows, cols = self.grid
        if rows < 1 or cols < 1:
            raise InvalidInputError(f"observation grid must be at least 1x1, got {self.grid}")
        if not self.extent > 0:
            raise InvalidInputError(f"observation extent must be positive, got {self.extent}")
        if self.plane not in PLANES:
            raise InvalidInputError(f"Unknown projection plane: {self.plane}")
        if self.noise_sigma < 0:
            raise InvalidInputError("noise_sigma must be non-negative")

    @property
    def size(self) -> int:
        return self.grid[0] * self.grid[1]

    def cell_centers(self) -> Tuple[np.ndarray, np.ndarray]:
        """Plane coordinates (u along columns, v along rows) of every cell centre."""
        rows, cols = self.grid
        u = self.center[0] - self.extent / 2 + (np.arange(cols) + 0.5) * self.extent / cols
        v = self.center[1] - self.extent / 2 + (np.arange(rows) + 0.5) * self.extent / rows
        return np.meshgrid(u, v)


def render_observation(field: DebrisField, spec: ObservationSpec, t: float) -> np.ndarray:
    """
    Flattened (row-major) occupancy grid at time t

    Args:
        field: debris field
        spec: grid, plane and noise description
        t: time in seconds, >= 0

    Returns:
        (rows * cols,) vector; occupied cells are 1, free cells 0, plus noise
    """
    rows, cols = spec.grid
    uu, vv = spec.cell_centers()
    grid = np.zeros((rows, cols))
    axes = list(PLANES[spec.plane])
    for center, radius in zip(field.centers(t), field.radii):
        du = uu - center[axes[0]]
        dv = vv - center[axes[1]]
        grid[du ** 2 + dv ** 2 <= radius ** 2] = 1.0
    if spec.noise_sigma > 0:
        rng = np.random.default_rng([spec.seed, int(round(t * 1e6))])
        grid = grid + rng.normal(0.0, spec.noise_sigma, size=(rows, cols))
    return rearrange(grid, "h w -> (h w)")


def observation_image(observation: np.ndarray, spec: ObservationSpec,
                      markers: Sequence[Tuple[int, int]] = (), scale: int = 8) -> Image.Image:
    """Render a flat observation as a PIL frame (row 0 at the top)."""
    grid = rearrange(np.asarray(observation), "(h w) -> h w", h=spec.grid[0], w=spec.grid[1])
    return create_visualization(grid, markers, scale)
