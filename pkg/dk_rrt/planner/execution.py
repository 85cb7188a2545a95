"""
Closed-loop execution with online obstacle-model refits.

Every control cycle the debris is observed, the obstacle window grows, the
obstacle operators are refitted when due, a fresh prediction is made, and
the arm replans from where it is when the remaining plan would collide
or the periodic refresh is due.
The arm then tracks the plan for one cycle under computed-torque PD.
"""
import dataclasses
import logging
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any, Dict, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..config import (CLEARANCE_CAP, HORIZON_STEPS, INFLATION_C0, INFLATION_C1,
                      REFIT_ERROR_THRESHOLD, REFIT_EVERY, REFIT_WINDOW, REPLAN_EVERY,
                      STATE_NOISE, WARMUP_CYCLES)
from ..errors import DimensionMismatchError, DivergenceError, InvalidInputError
from ..koopman.core import Trajectory, build_snapshots, fit_edmd, predict_rollout
from ..koopman.observables import (IdentityDictionary, affine_dictionary, fourier_from_data,
                                   rbf_from_data)
from ..sim.debris import DebrisField, debris_states
from ..sim.integrators import rk4_step
from ..sim.manipulator import ManipulatorModel, end_effector, forward_dynamics, inverse_dynamics
from ..sim.render import PLANES, render_observation
from ..utils import derive_seed, elapsed_ms, write_csv
from .collision import configuration_clearance, obstacle_clearances
from .prediction import (OBJECT_STATE_SIZE, InflationSchedule, ObstaclePrediction,
                         constant_velocity, predict_obstacles)
from .rrt import PlanNode, PlanQuery, path_arrays, path_collides, plan_rrt, reference_at

if TYPE_CHECKING:
    from ..sim.scene import Scene

logger = logging.getLogger(__name__)


class LearnerConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    method: Literal["dk_rrt", "frozen", "reactive"] = "dk_rrt"
    dictionary: Literal["identity", "affine", "rbf", "fourier"] = "affine"
    rbf_centers: int = Field(20, ge=1)
    fourier_harmonics: int = Field(2, ge=1)
    refit_every: int = Field(REFIT_EVERY, ge=1, description="Cycles between scheduled refits")
    window: int = Field(REFIT_WINDOW, ge=2, description="Observation samples kept for refits")
    warmup: int = Field(WARMUP_CYCLES, ge=2, description="Observation cycles before the arm moves")
    horizon_steps: int = Field(HORIZON_STEPS, ge=1)
    inflation_c0: float = Field(INFLATION_C0, ge=0)
    inflation_c1: float = Field(INFLATION_C1, ge=0)
    replan_every: int = Field(REPLAN_EVERY, ge=1)
    error_threshold: float = Field(REFIT_ERROR_THRESHOLD, gt=0)
    observe: Literal["states", "render"] = "states"
    state_noise: float = Field(STATE_NOISE, ge=0)
    encoder_checkpoint: Optional[str] = None
    plane_offset: float = Field(0.0, description="Out-of-plane coordinate assumed in render mode")

    @model_validator(mode="after")
    def _consistent(self):
        if self.warmup > self.window:
            raise ValueError(f"warmup ({self.warmup}) cannot exceed the window ({self.window})")
        if self.observe == "render" and not self.encoder_checkpoint:
            raise ValueError("render observation needs an encoder_checkpoint")
        return self


class DebrisSensor:
    """
    What the planner sees of the debris: noisy [p, v] states, or positions
    decoded from rendered grids by a trained encoder with finite-difference
    velocities.
    """

    def __init__(self, debris: DebrisField, cfg: LearnerConfig, seed: int, dt: float,
                 spec=None, encoder=None):
        self.debris = debris
        self.cfg = cfg
        self.dt = dt
        self.spec = spec
        self.encoder = encoder
        self.rng = np.random.default_rng(derive_seed(seed, 1))
        self._previous: Optional[np.ndarray] = None
        if cfg.observe == "render":
            if spec is None or encoder is None:
                raise InvalidInputError("render observation needs an observation spec and an encoder")
            if encoder.output_dim != 2 * len(debris):
                raise DimensionMismatchError(
                    f"encoder emits {encoder.output_dim} features, {len(debris)} obstacles need {2 * len(debris)}")

    def __call__(self, t: float) -> np.ndarray:
        if self.cfg.observe == "states":
            truth = debris_states(self.debris, t)
            return truth + self.rng.normal(0.0, self.cfg.state_noise, size=truth.shape)
        grid = render_observation(self.debris, self.spec, t)
        planar = self.encoder.encode(grid).reshape(-1, 2)
        positions = np.full((planar.shape[0], 3), self.cfg.plane_offset)
        positions[:, list(PLANES[self.spec.plane])] = planar
        velocities = np.zeros_like(positions) if self._previous is None \
            else (positions - self._previous) / self.dt
        self._previous = positions
        return np.hstack([positions, velocities]).reshape(-1)


class ObstacleLearner:
    """
    Sliding window of observed object states with one operator per obstacle
    on its 6-dim [p, v] state.
    """

    def __init__(self, cfg: LearnerConfig, radii: np.ndarray, dt: float, seed: int = 0):
        self.cfg = cfg
        self.radii = np.asarray(radii, dtype=np.float64)
        self.dt = dt
        self.seed = seed
        self.window = deque(maxlen=cfg.window)
        self.schedule = InflationSchedule(cfg.inflation_c0, cfg.inflation_c1)
        self.operators = None
        self.dictionaries = None
        self.version = 0
        self.refits = 0
        self.fit_ms = 0.0
        self._stale = False

    @property
    def n_obstacles(self) -> int:
        return self.radii.size

    def observe(self, state: np.ndarray):
        state = np.asarray(state, dtype=np.float64).reshape(-1)
        if state.size != OBJECT_STATE_SIZE * self.n_obstacles:
            raise DimensionMismatchError(f"observed {state.size} values for {self.n_obstacles} obstacles")
        if self.operators is not None and self.window and self.cfg.method == "dk_rrt":
            predicted = self.one_step(self.window[-1]).reshape(-1, OBJECT_STATE_SIZE)[:, :3]
            miss = np.linalg.norm(predicted - state.reshape(-1, OBJECT_STATE_SIZE)[:, :3], axis=1)
            if miss.size and np.max(miss) > self.cfg.error_threshold:
                self._stale = True
        self.window.append(state)

    def one_step(self, state: np.ndarray) -> np.ndarray:
        blocks = state.reshape(-1, OBJECT_STATE_SIZE)
        out = np.empty_like(blocks)
        for i, (op, dictionary) in enumerate(zip(self.operators, self.dictionaries)):
            try:
                out[i] = predict_rollout(op, dictionary, blocks[i], k=1)[0]
            except DivergenceError:
                out[i, :3] = constant_velocity(blocks[i], 1, self.dt)[1, 0]
                out[i, 3:] = blocks[i, 3:]
        return out.reshape(-1)

    def needs_refit(self, cycle: int) -> bool:
        if self.cfg.method == "reactive" or self.n_obstacles == 0 or len(self.window) < 2:
            return False
        if self.operators is None:
            return len(self.window) >= self.cfg.warmup
        if self.cfg.method == "frozen":
            return False
        return self._stale or cycle % self.cfg.refit_every == 0

    def _dictionary(self, X: np.ndarray, index: int):
        kind = self.cfg.dictionary
        if kind == "identity":
            return IdentityDictionary(OBJECT_STATE_SIZE)
        if kind == "affine":
            return affine_dictionary(OBJECT_STATE_SIZE)
        if kind == "rbf":
            return rbf_from_data(X, self.cfg.rbf_centers, seed=derive_seed(self.seed, index))
        return fourier_from_data(X, self.cfg.fourier_harmonics)

    def refit(self):
        """Wholesale refit of every obstacle operator on the current window."""
        start = time.perf_counter()
        data = np.stack(self.window)
        operators, dictionaries = [], []
        for i in range(self.n_obstacles):
            X = data[:, i * OBJECT_STATE_SIZE:(i + 1) * OBJECT_STATE_SIZE]
            dictionary = self._dictionary(X, i)
            snaps = build_snapshots([Trajectory(robot=X, objects=None, inputs=None, dt=self.dt)])
            operators.append(fit_edmd(snaps, dictionary, version=self.version + 1))
            dictionaries.append(dictionary)
        self.operators, self.dictionaries = operators, dictionaries
        self.version += 1
        self.refits += 1
        self._stale = False
        self.fit_ms += elapsed_ms(start)
        logger.debug(f"--> Refitted obstacle operators v{self.version} on {len(data)} samples")

    def predict(self, t: float) -> ObstaclePrediction:
        if self.n_obstacles == 0:
            return ObstaclePrediction.empty(t)
        current = self.window[-1]
        if self.cfg.method == "reactive":
            positions = current.reshape(-1, OBJECT_STATE_SIZE)[:, :3]
            return ObstaclePrediction.static(positions, self.radii, t, margin=self.cfg.inflation_c0)
        if self.operators is None:
            steps = self.cfg.horizon_steps
            margins = self.schedule.margins(steps, self.dt)
            return ObstaclePrediction(centers=constant_velocity(current, steps, self.dt),
                                      radii=self.radii[None, :] + margins[:, None],
                                      physical_radii=self.radii, t0=t, dt=self.dt, fallback=True)
        return predict_obstacles(self.operators, self.dictionaries, current, self.cfg.horizon_steps,
                                 self.schedule, self.radii, t0=t)


@dataclass
class ExecutionReport:
    method: str
    success: bool = False
    reason: str = ""
    execution_error: float = 0.0
    planning_ms: float = 0.0
    training_ms: float = 0.0
    min_clearance: float = CLEARANCE_CAP
    cycles: int = 0
    replans: int = 0
    refits: int = 0
    fallback: bool = False
    final_distance: float = float("inf")
    trajectory: Optional[List[Dict[str, Any]]] = field(default=None, repr=False)

    def as_row(self) -> Dict[str, Any]:
        row = dataclasses.asdict(self)
        row.pop("trajectory")
        return row


def _load_encoder(path: str):
    from ..checkpoint import load_checkpoint

    return load_checkpoint(path).encoder


def _trajectory_row(t: float, q, q_ref, qd, ee, ee_ref, clearances) -> Dict[str, Any]:
    row: Dict[str, Any] = {"t": t}
    row.update({f"q{i}": v for i, v in enumerate(q, start=1)})
    row.update({f"q_ref{i}": v for i, v in enumerate(q_ref, start=1)})
    row.update({f"qd{i}": v for i, v in enumerate(qd, start=1)})
    row.update({"ee_x": ee[0], "ee_y": ee[1], "ee_z": ee[2],
                "ee_ref_x": ee_ref[0], "ee_ref_y": ee_ref[1], "ee_ref_z": ee_ref[2]})
    row.update({f"clearance{k}": min(float(c), CLEARANCE_CAP) for k, c in enumerate(clearances)})
    return row


def _add_derivatives(rows: List[Dict[str, Any]], n: int, dt: float):
    """Joint acceleration and jerk by finite differences of the sampled velocities."""
    if len(rows) < 3:
        for row in rows:
            row.update({f"qdd{i}": 0.0 for i in range(1, n + 1)})
            row.update({f"jerk{i}": 0.0 for i in range(1, n + 1)})
        return
    qd = np.array([[row[f"qd{i}"] for i in range(1, n + 1)] for row in rows])
    qdd = np.gradient(qd, dt, axis=0)
    jerk = np.gradient(qdd, dt, axis=0)
    for k, row in enumerate(rows):
        row.update({f"qdd{i + 1}": qdd[k, i] for i in range(n)})
        row.update({f"jerk{i + 1}": jerk[k, i] for i in range(n)})


def _track_cycle(model: ManipulatorModel, q: np.ndarray, qd: np.ndarray, qs: np.ndarray,
                 ts: np.ndarray, t: float, dt: float, substeps: int, kp: float, kd: float):
    """Computed-torque PD with a zero-order-hold torque per RK4 substep."""
    n = model.n
    h = dt / substeps
    y = np.concatenate([q, qd])
    for s in range(substeps):
        tau_t = t + s * h
        q_ref, qd_ref = reference_at(qs, ts, tau_t)
        qdd_cmd = kp * (q_ref - y[:n]) + kd * (qd_ref - y[n:])
        torque = inverse_dynamics(model, y[:n], y[n:], qdd_cmd)

        def field_fn(_, yy):
            return np.concatenate([yy[n:], forward_dynamics(model, yy[:n], yy[n:], torque)])

        y = rk4_step(field_fn, tau_t, y, h)
        if not np.all(np.isfinite(y)):
            raise DivergenceError(s + 1, f"Arm simulation diverged at t={tau_t + h:.4f}")
    return y[:n], y[n:]


def execute_with_replanning(scene: "Scene", query: Optional[PlanQuery] = None,
                            learner: Optional[LearnerConfig] = None, seed: Optional[int] = None,
                            record_trajectory: bool = False) -> ExecutionReport:
    """
    Run one closed-loop episode

    Args:
        scene: robot, ground-truth debris, observation and execution settings
        query: planning query; defaults to the scene's
        learner: obstacle-model settings; defaults to the scene's
        seed: run seed for sensing noise and planning
        record_trajectory: keep per-cycle rows in the report

    Returns:
        ExecutionReport with success flag, mean joint tracking error (rad),
        planning and model-fitting time (ms) and minimum true clearance (m)
    """
    cfg = learner or scene.learner
    seed = scene.seed if seed is None else int(seed)
    model = scene.build_model()
    debris = scene.build_field()
    ex = scene.execution
    dt = ex.cycle_dt
    report = ExecutionReport(method=cfg.method)
    n_cycles = int(np.floor(ex.time_limit / dt + 1e-9))
    if n_cycles <= 0:
        report.reason = "time_limit"
        return report
    query = query or scene.plan_query(seed)

    spec = encoder = None
    if cfg.observe == "render":
        spec = scene.observation_spec(seed)
        encoder = _load_encoder(cfg.encoder_checkpoint)
    sensor = DebrisSensor(debris, cfg, seed, dt, spec, encoder)
    learner_state = ObstacleLearner(cfg, debris.radii, dt, seed)

    # the arm holds at the start while the window fills
    q = query.start.copy()
    qd = np.zeros(model.n)
    t_start = cfg.warmup * dt
    start_gap = CLEARANCE_CAP
    for w in range(cfg.warmup + 1):
        if w < cfg.warmup:
            learner_state.observe(sensor(w * dt))
        gap = configuration_clearance(model, q, debris.centers(w * dt), debris.radii)
        start_gap = min(start_gap, gap)
        if gap < 0:
            report.reason = "start_in_collision" if w == 0 else "collision"
            report.min_clearance = start_gap
            logger.info(f"--> {cfg.method}: {report.reason} at t={w * dt:.3f} while holding the start")
            return report

    lim = model.qlim
    plan: List[PlanNode] = [PlanNode(q.copy(), t_start)]
    substeps = max(1, int(round(dt / ex.sim_dt)))
    errors: List[float] = []
    min_gap = min(start_gap, CLEARANCE_CAP)
    rows: List[Dict[str, Any]] = []

    for c in range(n_cycles):
        t = t_start + c * dt
        learner_state.observe(sensor(t))
        if learner_state.needs_refit(c):
            learner_state.refit()
        pred = learner_state.predict(t)
        report.fallback |= pred.fallback

        periodic = c % cfg.replan_every == 0
        if periodic or path_collides(model, plan, t, pred, query.resolution):
            q_plan = np.clip(q, lim[:, 0], lim[:, 1])
            result = plan_rrt(dataclasses.replace(query, start=q_plan, t0=t, seed=derive_seed(seed, c)),
                              pred, model)
            report.planning_ms += result.planning_ms
            report.replans += 1
            if result.success:
                plan = result.path
            else:
                plan = [PlanNode(q_plan, t)]
                logger.debug(f"--> Cycle {c}: replanning failed ({result.reason}), holding")

        qs, ts = path_arrays(plan)
        q, qd = _track_cycle(model, q, qd, qs, ts, t, dt, substeps, ex.kp, ex.kd)
        t_next = t + dt
        report.cycles = c + 1

        q_ref = reference_at(qs, ts, t_next)[0]
        errors.append(float(np.mean(np.abs(q - q_ref))))
        gaps = obstacle_clearances(model, q, debris.centers(t_next), debris.radii)
        gap = float(np.min(gaps)) if gaps.size else CLEARANCE_CAP
        min_gap = min(min_gap, gap)
        ee = end_effector(model, q)
        report.final_distance = float(np.linalg.norm(ee - query.goal))
        if record_trajectory:
            rows.append(_trajectory_row(t_next, q, q_ref, qd, ee, end_effector(model, q_ref), gaps))
        if gap < 0:
            report.reason = "collision"
            break
        if report.final_distance <= query.tolerance:
            report.success = True
            break
    else:
        report.reason = "time_limit"

    report.execution_error = float(np.mean(errors)) if errors else 0.0
    report.min_clearance = float(min(min_gap, CLEARANCE_CAP))
    report.training_ms = learner_state.fit_ms
    report.refits = learner_state.refits
    if record_trajectory:
        _add_derivatives(rows, model.n, dt)
        report.trajectory = rows
    logger.info(f"--> {cfg.method}: {'success' if report.success else report.reason} after "
                f"{report.cycles} cycles, {report.replans} plans, {report.refits} refits")
    return report


def plan_reactive_baseline(query: Optional[PlanQuery], scene: "Scene", seed: Optional[int] = None,
                           record_trajectory: bool = False) -> ExecutionReport:
    """Same loop with obstacles assumed frozen at their last observed positions."""
    learner = scene.learner.model_copy(update={"method": "reactive"})
    return execute_with_replanning(scene, query, learner, seed, record_trajectory)


def write_trajectory_csv(report: ExecutionReport, path: Union[str, Path]) -> Path:
    if report.trajectory is None:
        raise InvalidInputError("report was produced without record_trajectory")
    return write_csv(report.trajectory, path)
