"""
Time-augmented RRT in joint space. Nodes carry (q, t); an edge's duration
is fixed by the joint-velocity bound, and every edge is checked against the
obstacle prediction at the times the arm would traverse it.
"""
import logging
import time
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from ..config import (EDGE_RESOLUTION, GOAL_BIAS, GOAL_TOLERANCE, IK_DAMPING, IK_ITERATIONS,
                      MAX_ITERATION_FACTOR, MAX_NODES, STEP_SIZE)
from ..errors import InvalidInputError
from ..sim.manipulator import ManipulatorModel, end_effector, position_jacobian
from ..utils import elapsed_ms
from .collision import configuration_clearance, edge_collides, link_reach
from .prediction import ObstaclePrediction

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PlanQuery:
    start: np.ndarray
    goal: np.ndarray
    tolerance: float = GOAL_TOLERANCE
    max_nodes: int = MAX_NODES
    step_size: float = STEP_SIZE
    goal_bias: float = GOAL_BIAS
    seed: int = 0
    resolution: int = EDGE_RESOLUTION
    t0: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "start", np.asarray(self.start, dtype=np.float64).reshape(-1))
        object.__setattr__(self, "goal", np.asarray(self.goal, dtype=np.float64).reshape(-1))
        if self.goal.shape != (3,):
            raise InvalidInputError(f"goal must be a 3-vector, got {self.goal.shape}")
        if not self.tolerance > 0:
            raise InvalidInputError(f"goal tolerance must be positive, got {self.tolerance}")
        if not 0.0 <= self.goal_bias <= 1.0:
            raise InvalidInputError(f"goal_bias must lie in [0, 1], got {self.goal_bias}")
        if self.max_nodes < 1 or self.resolution < 1:
            raise InvalidInputError("max_nodes and resolution must be >= 1")
        if not self.step_size > 0:
            raise InvalidInputError(f"step_size must be positive, got {self.step_size}")


@dataclass(eq=False)
class PlanNode:
    q: np.ndarray
    t: float
    parent: Optional["PlanNode"] = None

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=np.float64)
        if self.parent is not None and not self.t > self.parent.t:
            raise InvalidInputError(f"node time {self.t} must exceed its parent's {self.parent.t}")

    def path(self) -> List["PlanNode"]:
        """Root-to-node chain."""
        out = []
        node = self
        while node is not None:
            out.append(node)
            node = node.parent
        return out[::-1]


@dataclass
class PlanResult:
    success: bool
    path: List[PlanNode] = field(default_factory=list)
    tree_size: int = 0
    iterations: int = 0
    nodes: List[PlanNode] = field(default_factory=list)
    reason: str = ""
    planning_ms: float = 0.0


def path_arrays(path: List[PlanNode]) -> Tuple[np.ndarray, np.ndarray]:
    """(k, n) configurations and (k,) times of a node path."""
    return np.stack([n.q for n in path]), np.array([n.t for n in path])


def solve_ik(model: ManipulatorModel, target: np.ndarray, q0: np.ndarray, rng: np.random.Generator,
             tolerance: float = GOAL_TOLERANCE, iterations: int = IK_ITERATIONS,
             damping: float = IK_DAMPING, restarts: int = 5) -> Optional[np.ndarray]:
    """
    Damped-least-squares position IK with random restarts

    Returns:
        A configuration within joint limits whose end effector is within
        tolerance of target, or None
    """
    lim = model.qlim
    q = np.clip(np.asarray(q0, dtype=np.float64), lim[:, 0], lim[:, 1])
    for attempt in range(restarts + 1):
        if attempt > 0:
            q = rng.uniform(lim[:, 0], lim[:, 1])
        for _ in range(iterations):
            err = target - end_effector(model, q)
            if np.linalg.norm(err) <= 0.5 * tolerance:
                return q
            J = position_jacobian(model, q)
            dq = J.T @ np.linalg.solve(J @ J.T + damping ** 2 * np.eye(3), err)
            q = np.clip(q + dq, lim[:, 0], lim[:, 1])
        if np.linalg.norm(target - end_effector(model, q)) <= tolerance:
            return q
    return None


def swept_margin(reach: np.ndarray, dq: np.ndarray, dt: float, resolution: int,
                 boundary_speed: float) -> float:
    """
    Clearance that edge samples must keep so that no point between two
    adjacent samples can touch an obstacle
    """
    arm = float(np.sum(np.abs(dq) * reach)) / resolution
    obstacles = boundary_speed * dt / resolution
    return 0.5 * (arm + obstacles)


def plan_rrt(query: PlanQuery, pred: ObstaclePrediction, model: ManipulatorModel) -> PlanResult:
    """
    Grow a time-augmented RRT from the query start

    Args:
        query: start, end-effector goal, tolerance, node budget, step, goal bias, seed
        pred: obstacle prediction starting at query.t0
        model: manipulator

    Returns:
        PlanResult; on failure success is False and reason names the cause
    """
    start_time = time.perf_counter()
    (q_start,) = model._check(query.start)
    lim = model.qlim
    if not model.within_limits(q_start):
        raise InvalidInputError(f"start configuration {q_start} violates the joint limits")

    root = PlanNode(q_start, query.t0)
    centers, radii = pred.at(query.t0)
    if configuration_clearance(model, q_start, centers, radii) < 0:
        return PlanResult(False, [], 1, 0, [root], "start_in_collision", elapsed_ms(start_time))
    if np.linalg.norm(end_effector(model, q_start) - query.goal) <= query.tolerance:
        return PlanResult(True, [root], 1, 0, [root], "", elapsed_ms(start_time))

    rng = np.random.default_rng(query.seed)
    q_goal = solve_ik(model, query.goal, q_start, rng, query.tolerance)
    reach = link_reach(model)
    qd_max = model.qd_max
    boundary_speed = pred.max_boundary_speed()

    nodes = [root]
    Q = np.empty((query.max_nodes, model.n))
    Q[0] = q_start
    max_iterations = MAX_ITERATION_FACTOR * query.max_nodes
    iterations = 0
    while len(nodes) < query.max_nodes and iterations < max_iterations:
        iterations += 1
        if q_goal is not None and rng.random() < query.goal_bias:
            q_rand = q_goal
        else:
            q_rand = rng.uniform(lim[:, 0], lim[:, 1])
        k = int(np.argmin(np.sum((Q[:len(nodes)] - q_rand) ** 2, axis=1)))
        near = nodes[k]
        delta = q_rand - near.q
        dist = float(np.linalg.norm(delta))
        if dist < 1e-12:
            continue
        q_new = near.q + delta * min(1.0, query.step_size / dist)
        dq = q_new - near.q
        duration = float(np.max(np.abs(dq) / qd_max))
        t_new = near.t + duration
        if t_new > pred.t_end:
            continue
        margin = swept_margin(reach, dq, duration, query.resolution, boundary_speed)
        if edge_collides(model, near.q, near.t, q_new, t_new, pred, query.resolution, margin):
            continue
        node = PlanNode(q_new, t_new, near)
        Q[len(nodes)] = q_new
        nodes.append(node)
        if np.linalg.norm(end_effector(model, q_new) - query.goal) <= query.tolerance:
            logger.debug(f"--> RRT reached goal with {len(nodes)} nodes after {iterations} iterations")
            return PlanResult(True, node.path(), len(nodes), iterations, nodes, "", elapsed_ms(start_time))

    logger.debug(f"--> RRT failed: {len(nodes)} nodes, {iterations} iterations")
    reason = "max_nodes" if len(nodes) >= query.max_nodes else "max_iterations"
    return PlanResult(False, [], len(nodes), iterations, nodes, reason, elapsed_ms(start_time))


def path_collides(model: ManipulatorModel, path: List[PlanNode], t_now: float,
                  pred: ObstaclePrediction, resolution: int) -> bool:
    """
    Check the part of a path after t_now against a new prediction; edges
    reaching past the prediction horizon are checked up to the horizon.
    A single-node path is a hold and is checked as standing still.
    """
    qs, ts = path_arrays(path)
    t_end = pred.t_end
    if len(path) == 1 or t_now >= ts[-1]:
        q_hold = qs[-1]
        t_stop = t_end if np.isfinite(t_end) else t_now + 1.0
        if t_stop <= t_now:
            return False
        return edge_collides(model, q_hold, t_now, q_hold, t_stop, pred, resolution)
    q_now = reference_at(qs, ts, t_now)[0]
    times = np.concatenate([[t_now], ts[ts > t_now]])
    configs = np.vstack([q_now[None, :], qs[ts > t_now]])
    for i in range(len(times) - 1):
        t_a, t_b = times[i], times[i + 1]
        if t_a >= t_end:
            break
        q_a, q_b = configs[i], configs[i + 1]
        if t_b > t_end:
            q_b = q_a + (q_b - q_a) * (t_end - t_a) / (t_b - t_a)
            t_b = t_end
        if t_b - t_a <= 1e-12:
            continue
        if edge_collides(model, q_a, t_a, q_b, t_b, pred, resolution):
            return True
    return False


def reference_at(qs: np.ndarray, ts: np.ndarray, t: float) -> Tuple[np.ndarray, np.ndarray]:
    """Piecewise-linear reference position and velocity at time t; holds outside [ts[0], ts[-1]]."""
    if len(ts) == 1 or t <= ts[0]:
        return qs[0].copy(), np.zeros(qs.shape[1])
    if t >= ts[-1]:
        return qs[-1].copy(), np.zeros(qs.shape[1])
    k = int(np.searchsorted(ts, t, side="right")) - 1
    span = ts[k + 1] - ts[k]
    w = (t - ts[k]) / span
    return qs[k] + w * (qs[k + 1] - qs[k]), (qs[k + 1] - qs[k]) / span
