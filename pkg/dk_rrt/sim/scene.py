"""
Scene file schema. A scene is a YAML document validated by these models;
see README.md for an annotated example.
"""
import dataclasses
from pathlib import Path
from typing import Annotated, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..config import (CYCLE_DT, EDGE_RESOLUTION, EXEC_SIM_DT, GOAL_BIAS, GOAL_TOLERANCE,
                      JOINT_VELOCITY_LIMIT, LINK_RADIUS, MAX_NODES, OBSERVATION_EXTENT,
                      OBSERVATION_GRID, OBSERVATION_NOISE, SAMPLE_DT, SIM_DT, STEP_SIZE,
                      TRACKING_KD, TRACKING_KP)
from ..planner.execution import LearnerConfig
from ..planner.rrt import PlanQuery
from ..training.deep_training import TrainingConfig
from ..utils import load_yaml_config
from .debris import Ballistic, Circular, DebrisField, Obstacle, Reversing, Sinusoidal
from .manipulator import PRESETS, Link, ManipulatorModel
from .render import ObservationSpec

Vec3 = Tuple[float, float, float]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class BallisticSpec(_Strict):
    type: Literal["ballistic"]
    p0: Vec3
    v0: Vec3

    def build(self):
        return Ballistic(self.p0, self.v0)


class SinusoidalSpec(_Strict):
    type: Literal["sinusoidal"]
    center: Vec3
    amplitude: Vec3
    rate: float = Field(..., description="Angular rate, rad/s")
    phase: float = 0.0

    def build(self):
        return Sinusoidal(self.center, self.amplitude, self.rate, self.phase)


class CircularSpec(_Strict):
    type: Literal["circular"]
    center: Vec3
    radius: float = Field(..., ge=0)
    rate: float = Field(..., description="Angular rate, rad/s")
    phase: float = 0.0

    def build(self):
        return Circular(self.center, self.radius, self.rate, self.phase)


class ReversingSpec(_Strict):
    type: Literal["reversing"]
    p0: Vec3
    v0: Vec3
    t_reverse: float = Field(..., ge=0, description="Time of the velocity reversal, s")

    def build(self):
        return Reversing(self.p0, self.v0, self.t_reverse)


MotionSpec = Annotated[Union[BallisticSpec, SinusoidalSpec, CircularSpec, ReversingSpec],
                       Field(discriminator="type")]


class ObstacleSpec(_Strict):
    radius: float = Field(..., gt=0, description="Bounding-sphere radius, m")
    motion: MotionSpec


class LinkSpec(_Strict):
    a: float
    alpha: float
    d: float
    offset: float = 0.0
    mass: float = Field(1.0, gt=0)
    com: Vec3 = (0.0, 0.0, 0.0)
    inertia: List[List[float]] = Field(default_factory=lambda: (1e-3 * np.eye(3)).tolist())
    qlim: Tuple[float, float] = (-np.pi, np.pi)
    qd_max: float = Field(JOINT_VELOCITY_LIMIT, gt=0)
    radius: float = Field(LINK_RADIUS, ge=0)


class RobotSpec(_Strict):
    preset: Optional[Literal["pendulum", "planar_two_link", "six_dof_arm"]] = "six_dof_arm"
    links: Optional[List[LinkSpec]] = None
    gravity: Vec3 = (0.0, 0.0, 0.0)
    qd_max: Optional[float] = Field(None, gt=0, description="Overrides every joint's velocity bound")
    link_radius: Optional[float] = Field(None, ge=0)

    @model_validator(mode="after")
    def _one_source(self):
        if self.links is None and self.preset is None:
            raise ValueError("robot needs either a preset or an explicit link list")
        if self.links is not None and not 1 <= len(self.links) <= 6:
            raise ValueError("1 to 6 links are supported")
        return self

    def build(self) -> ManipulatorModel:
        if self.links is not None:
            links = [Link(**spec.model_dump()) for spec in self.links]
            name = "custom"
        else:
            base = PRESETS[self.preset]()
            links, name = list(base.links), base.name
        overrides = {}
        if self.qd_max is not None:
            overrides["qd_max"] = self.qd_max
        if self.link_radius is not None:
            overrides["radius"] = self.link_radius
        if overrides:
            links = [dataclasses.replace(l, **overrides) for l in links]
        return ManipulatorModel(links=tuple(links), gravity=tuple(self.gravity), name=name)


class ObservationSettings(_Strict):
    grid: Tuple[int, int] = OBSERVATION_GRID
    plane: Literal["xy", "xz", "yz"] = "xy"
    center: Tuple[float, float] = (0.0, 0.0)
    extent: float = Field(OBSERVATION_EXTENT, gt=0)
    noise_sigma: float = Field(OBSERVATION_NOISE, ge=0)

    def build(self, seed: int) -> ObservationSpec:
        return ObservationSpec(grid=tuple(self.grid), plane=self.plane, center=tuple(self.center),
                               extent=self.extent, noise_sigma=self.noise_sigma, seed=seed)


class QuerySettings(_Strict):
    start: List[float]
    goal: Vec3
    tolerance: float = Field(GOAL_TOLERANCE, gt=0)
    max_nodes: int = Field(MAX_NODES, ge=1)
    step_size: float = Field(STEP_SIZE, gt=0)
    goal_bias: float = Field(GOAL_BIAS, ge=0, le=1)
    resolution: int = Field(EDGE_RESOLUTION, ge=1)


class ExecutionSettings(_Strict):
    time_limit: float = Field(20.0, ge=0, description="Seconds of execution after warm-up")
    cycle_dt: float = Field(CYCLE_DT, gt=0)
    sim_dt: float = Field(EXEC_SIM_DT, gt=0)
    kp: float = Field(TRACKING_KP, gt=0)
    kd: float = Field(TRACKING_KD, ge=0)


class SimulateSettings(_Strict):
    duration: float = Field(5.0, gt=0)
    dt: float = Field(SIM_DT, gt=0)
    sample_dt: float = Field(SAMPLE_DT, gt=0)
    frames: bool = False


class Scene(_Strict):
    name: str
    seed: int = 0
    robot: RobotSpec = Field(default_factory=RobotSpec)
    debris: List[ObstacleSpec] = Field(default_factory=list)
    observation: ObservationSettings = Field(default_factory=ObservationSettings)
    query: Optional[QuerySettings] = None
    execution: ExecutionSettings = Field(default_factory=ExecutionSettings)
    learner: LearnerConfig = Field(default_factory=LearnerConfig)
    training: Optional[TrainingConfig] = None
    simulate: SimulateSettings = Field(default_factory=SimulateSettings)

    @model_validator(mode="after")
    def _query_matches_robot(self):
        if self.query is not None:
            n = self.robot.build().n
            if len(self.query.start) != n:
                raise ValueError(f"query.start has {len(self.query.start)} joints, robot has {n}")
        return self

    def build_model(self) -> ManipulatorModel:
        return self.robot.build()

    def build_field(self) -> DebrisField:
        return DebrisField(tuple(Obstacle(o.radius, o.motion.build()) for o in self.debris))

    def observation_spec(self, seed: Optional[int] = None) -> ObservationSpec:
        return self.observation.build(self.seed if seed is None else seed)

    def plan_query(self, seed: Optional[int] = None, start: Optional[np.ndarray] = None,
                   t0: float = 0.0) -> PlanQuery:
        if self.query is None:
            raise ValueError(f"scene {self.name!r} defines no query")
        q = self.query
        return PlanQuery(start=np.asarray(q.start if start is None else start, dtype=np.float64),
                         goal=np.asarray(q.goal, dtype=np.float64), tolerance=q.tolerance,
                         max_nodes=q.max_nodes, step_size=q.step_size, goal_bias=q.goal_bias,
                         seed=self.seed if seed is None else seed, resolution=q.resolution, t0=t0)


def load_scene(path: Union[str, Path]) -> Scene:
    """Parse and validate a scene YAML file (ConfigError names file and line)."""
    return load_yaml_config(path, Scene)
