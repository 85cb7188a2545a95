"""
Capsule-versus-sphere collision checks for the arm against predicted or
ground-truth obstacles.
"""
import numpy as np

from ..errors import InvalidInputError
from ..sim.manipulator import ManipulatorModel, joint_positions
from .prediction import ObstaclePrediction


def segment_point_distance(a: np.ndarray, b: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Distance from points p to segments [a, b]; all arguments broadcast over leading axes."""
    ab = b - a
    denom = np.sum(ab * ab, axis=-1)
    s = np.where(denom > 0, np.sum((p - a) * ab, axis=-1) / np.where(denom > 0, denom, 1.0), 0.0)
    s = np.clip(s, 0.0, 1.0)
    closest = a + s[..., None] * ab
    return np.linalg.norm(p - closest, axis=-1)


def link_reach(model: ManipulatorModel) -> np.ndarray:
    """Upper bound on the distance from joint i to any point of the links it moves."""
    lengths = np.array([np.hypot(l.a, l.d) for l in model.links]) + model.radii
    return np.cumsum(lengths[::-1])[::-1]


def _signed_gaps(model: ManipulatorModel, qs: np.ndarray, centers: np.ndarray,
                 radii: np.ndarray) -> np.ndarray:
    """(S, n_links, n_obs) surface gaps for S configurations against S obstacle snapshots."""
    pos = joint_positions(model, qs)
    a = pos[:, :-1, None, :]
    b = pos[:, 1:, None, :]
    p = centers[:, None, :, :]
    dist = segment_point_distance(a, b, p)
    return dist - model.radii[None, :, None] - radii[:, None, :]


def configuration_clearance(model: ManipulatorModel, q: np.ndarray, centers: np.ndarray,
                            radii: np.ndarray) -> float:
    """Smallest gap between any link capsule and any obstacle sphere; inf with no obstacles."""
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    radii = np.asarray(radii, dtype=np.float64).reshape(-1)
    if radii.size == 0:
        return float("inf")
    (q,) = model._check(q)
    gaps = _signed_gaps(model, q[None, :], centers[None], radii[None])
    return float(np.min(gaps))


def obstacle_clearances(model: ManipulatorModel, q: np.ndarray, centers: np.ndarray,
                        radii: np.ndarray) -> np.ndarray:
    """Per-obstacle clearance of the whole arm."""
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    radii = np.asarray(radii, dtype=np.float64).reshape(-1)
    if radii.size == 0:
        return np.zeros(0)
    (q,) = model._check(q)
    return np.min(_signed_gaps(model, q[None, :], centers[None], radii[None])[0], axis=0)


def edge_collides(model: ManipulatorModel, q_a, t_a: float, q_b, t_b: float,
                  pred: ObstaclePrediction, resolution: int, margin: float = 0.0) -> bool:
    """
    True iff any of resolution + 1 evenly spaced samples along the edge
    (endpoints included) penetrates a predicted obstacle

    Args:
        model: manipulator
        q_a, q_b: edge endpoints
        t_a, t_b: their times, t_b > t_a
        pred: obstacle prediction covering [t_a, t_b]
        resolution: number of sub-intervals, >= 1
        margin: extra clearance required at every sample

    Raises:
        HorizonExceededError: when [t_a, t_b] leaves the prediction horizon
    """
    if resolution < 1:
        raise InvalidInputError(f"resolution must be >= 1, got {resolution}")
    if not t_b > t_a:
        raise InvalidInputError(f"edge must move forward in time, got t_a={t_a}, t_b={t_b}")
    q_a, q_b = model._check(q_a, q_b)
    s = np.linspace(0.0, 1.0, resolution + 1)
    ts = t_a + s * (t_b - t_a)
    centers, radii = pred.at_times(ts)
    if pred.n_obstacles == 0:
        return False
    qs = q_a[None, :] + s[:, None] * (q_b - q_a)[None, :]
    gaps = _signed_gaps(model, qs, centers, radii)
    return bool(np.any(gaps < margin))
