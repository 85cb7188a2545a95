"""
Alternating optimization of the visual feature extractor and the composite
Koopman operator.

The encoder maps a flattened occupancy grid to object features. Each epoch
samples rollout windows, takes one SGD step on the encoder against the
robot-state rollout loss with the operator held fixed, and every
`refit_period` epochs refits the operator on the re-encoded dataset.
"""
import dataclasses
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..config import (BATCH, ENCODER_HIDDEN, LEARNING_RATE, N_EPOCH, N_STEP, NUM_WORKERS,
                      REFERENCE_GAIN, REFERENCE_KD, REFERENCE_KP, REFIT_PERIOD, SAMPLE_DT,
                      TRAINING_SUBSTEPS)
from ..errors import (DimensionMismatchError, EmptyDatasetError,
                      HorizonExceededError, InvalidInputError, TrainingDivergedError)
from ..koopman.core import LiftedOperator, Trajectory, build_snapshots, fit_edmd, predict_rollout
from ..koopman.encoder import EncoderParams, MlpEncoder, encoder_config
from ..koopman.observables import (CompositeDictionary, Dictionary, IdentityDictionary,
                                   affine_dictionary, compose_composite)
from ..sim.debris import DebrisField
from ..sim.manipulator import ManipulatorModel, integrate_rk4, inverse_dynamics
from ..sim.render import PLANES, ObservationSpec, render_observation
from ..utils import derive_seed, elapsed_ms, write_csv

logger = logging.getLogger(__name__)

LOSS_COLUMNS = ["epoch", "rollout_loss", "operator_version", "wall_ms"]


class TrainingConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    n_epoch: int = Field(N_EPOCH, ge=0)
    n_step: int = Field(N_STEP, ge=1, description="Rollout horizon in samples")
    refit_period: int = Field(REFIT_PERIOD, ge=1, description="Epochs between operator refits")
    learning_rate: float = Field(LEARNING_RATE, gt=0)
    batch: int = Field(BATCH, ge=1, description="Rollout windows per epoch")
    seed: int = 0
    # synthetic dataset
    n_trajectories: int = Field(4, ge=1)
    steps: int = Field(200, ge=1, description="Samples per trajectory after the initial one")
    dt: float = Field(SAMPLE_DT, gt=0)
    substeps: int = Field(TRAINING_SUBSTEPS, ge=1, description="RK4 steps per sample")
    reference_gain: float = REFERENCE_GAIN
    kp: float = Field(REFERENCE_KP, gt=0)
    kd: float = Field(REFERENCE_KD, ge=0)
    hidden: Tuple[int, ...] = ENCODER_HIDDEN
    robot_dictionary: Literal["identity", "affine"] = "identity"


@dataclass(frozen=True, eq=False)
class ObservationTrajectory:
    """
    One recorded run: robot states, flattened observations and, for
    evaluation only, the ground-truth object features.
    """
    robot: np.ndarray
    observations: np.ndarray
    objects: Optional[np.ndarray] = None
    inputs: Optional[np.ndarray] = None
    dt: float = SAMPLE_DT
    t0: float = 0.0

    def __post_init__(self):
        robot = np.atleast_2d(np.asarray(self.robot, dtype=np.float64))
        obs = np.atleast_2d(np.asarray(self.observations, dtype=np.float64))
        T = robot.shape[0]
        if obs.shape[0] != T:
            raise DimensionMismatchError(f"{T} robot states but {obs.shape[0]} observations")
        objects = self.objects
        if objects is not None:
            objects = np.asarray(objects, dtype=np.float64).reshape(T, -1)
        inputs = self.inputs
        if inputs is not None:
            inputs = np.asarray(inputs, dtype=np.float64).reshape(max(T - 1, 0), -1)
        if not self.dt > 0:
            raise InvalidInputError(f"dt must be positive, got {self.dt}")
        object.__setattr__(self, "robot", robot)
        object.__setattr__(self, "observations", obs)
        object.__setattr__(self, "objects", objects)
        object.__setattr__(self, "inputs", inputs)

    @property
    def length(self) -> int:
        return self.robot.shape[0]

    @property
    def n_robot(self) -> int:
        return self.robot.shape[1]

    @property
    def observation_dim(self) -> int:
        return self.observations.shape[1]


@dataclass(frozen=True, eq=False)
class ObservationDataset:
    trajectories: Tuple[ObservationTrajectory, ...]

    def __post_init__(self):
        trajs = tuple(self.trajectories)
        if not trajs:
            raise EmptyDatasetError("observation dataset needs at least one trajectory")
        first = trajs[0]
        for i, tr in enumerate(trajs[1:], start=1):
            if tr.observation_dim != first.observation_dim:
                raise DimensionMismatchError(
                    f"trajectory {i} has {tr.observation_dim}-dim observations, expected {first.observation_dim}")
            if tr.n_robot != first.n_robot:
                raise DimensionMismatchError(f"trajectory {i} has a {tr.n_robot}-dim robot state")
            if not np.isclose(tr.dt, first.dt, rtol=1e-9, atol=0.0):
                raise DimensionMismatchError(f"trajectory {i} uses dt={tr.dt}, expected {first.dt}")
        object.__setattr__(self, "trajectories", trajs)

    def __len__(self):
        return len(self.trajectories)

    @property
    def dt(self) -> float:
        return self.trajectories[0].dt

    def windows(self, n_step: int) -> List[Tuple[int, int]]:
        """Every (trajectory, tau0) with tau0 + n_step inside the trajectory."""
        return [(i, tau0) for i, tr in enumerate(self.trajectories)
                for tau0 in range(tr.length - n_step)]


class OracleEncoder:
    """Feature extractor returning the ground-truth object features."""

    def __init__(self, output_dim: int):
        self.output_dim = int(output_dim)

    def features(self, traj: ObservationTrajectory) -> np.ndarray:
        if traj.objects is None:
            raise InvalidInputError("oracle features need ground-truth object states")
        if traj.objects.shape[1] != self.output_dim:
            raise DimensionMismatchError(
                f"oracle expects {self.output_dim} object features, trajectory has {traj.objects.shape[1]}")
        return traj.objects


FeatureExtractor = Union[MlpEncoder, OracleEncoder]


def extract_features(enc: FeatureExtractor, traj: ObservationTrajectory,
                     index: Optional[int] = None) -> np.ndarray:
    """(T, n_w) features for a trajectory, or (n_w,) at one index."""
    if isinstance(enc, OracleEncoder):
        feats = enc.features(traj)
        return feats if index is None else feats[index]
    if index is None:
        return enc.encode(traj.observations)
    return enc.encode(traj.observations[index])


def composite_dictionary(dict_r: Dictionary, enc: FeatureExtractor) -> CompositeDictionary:
    """Robot dictionary stacked with the identity on the encoder's features."""
    return compose_composite(dict_r, IdentityDictionary(enc.output_dim))


def robot_dictionary(kind: str, n_robot: int) -> Dictionary:
    if kind == "identity":
        return IdentityDictionary(n_robot)
    if kind == "affine":
        return affine_dictionary(n_robot)
    raise ValueError(f"Unknown robot dictionary: {kind}")


def _check_window(traj: ObservationTrajectory, tau0: int, n_step: int):
    if n_step < 1:
        raise InvalidInputError(f"n_step must be >= 1, got {n_step}")
    if tau0 < 0 or tau0 + n_step >= traj.length:
        raise HorizonExceededError(
            f"window [{tau0}, {tau0 + n_step}] overruns a trajectory of {traj.length} samples")


def _window_inputs(traj: ObservationTrajectory, tau0: int, n_step: int):
    if traj.inputs is None:
        return None
    return traj.inputs[tau0:tau0 + n_step]


def rollout_loss(op: LiftedOperator, dictionary: CompositeDictionary, enc: FeatureExtractor,
                 traj: ObservationTrajectory, tau0: int, n_step: int) -> float:
    """
    Sum over k of ||xi_r(tau0 + k + 1) - predicted xi_r||^2, starting from
    the true robot state and the encoder's features at tau0
    """
    _check_window(traj, tau0, n_step)
    chi0 = np.concatenate([traj.robot[tau0], extract_features(enc, traj, tau0)])
    pred = predict_rollout(op, dictionary, chi0, _window_inputs(traj, tau0, n_step), k=n_step)
    n_r = traj.n_robot
    resid = traj.robot[tau0 + 1:tau0 + n_step + 1] - pred[:, :n_r]
    return float(np.sum(resid ** 2))


def encoder_gradient(op: LiftedOperator, dictionary: CompositeDictionary, enc: MlpEncoder,
                     traj: ObservationTrajectory, tau0: int,
                     n_step: int) -> Tuple[float, EncoderParams]:
    """
    Rollout loss of one window and its gradient with respect to the encoder

    The operator is held fixed. Sensitivities of the re-lifted rollout with
    respect to the initial features are carried forward as
    S_{k+1} = Pi Gamma J_phi(chi_k) S_k with S_0 = [0; I].

    Returns:
        (loss, gradients shaped like enc.params()); loss is inf when the rollout diverges
    """
    _check_window(traj, tau0, n_step)
    if dictionary.dict_id != op.dict_id:
        raise InvalidInputError("operator was fitted with a different dictionary")
    n_r = traj.n_robot
    n_w = enc.output_dim
    iota = traj.observations[tau0]
    chi = np.concatenate([traj.robot[tau0], enc.encode(iota)])
    us = _window_inputs(traj, tau0, n_step)

    S = np.vstack([np.zeros((n_r, n_w)), np.eye(n_w)])
    PG = op.Pi @ op.Gamma
    loss = 0.0
    d_feat = np.zeros(n_w)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n_step):
            z = op.Gamma @ dictionary.lift(chi)
            if us is not None and op.input_dim:
                z = z + op.Delta @ us[k]
            S = PG @ dictionary.state_jacobian(chi) @ S
            chi = op.Pi @ z
            if not (np.all(np.isfinite(chi)) and np.all(np.isfinite(S))):
                return float("inf"), [(np.zeros_like(W), np.zeros_like(b)) for W, b in enc.params()]
            r = traj.robot[tau0 + k + 1] - chi[:n_r]
            loss += float(r @ r)
            d_feat -= 2.0 * S[:n_r].T @ r
    return loss, enc.param_vjp(iota, d_feat)


def refit_operator(ds: ObservationDataset, enc: FeatureExtractor, dictionary: CompositeDictionary,
                   version: int = 0) -> LiftedOperator:
    """Re-encode every observation and fit EDMD on the composite states (xi_r, xi_w_hat)."""
    snaps = build_snapshots(feature_trajectories(ds, enc))
    return fit_edmd(snaps, dictionary, version=version)


def feature_trajectories(ds: ObservationDataset, enc: FeatureExtractor) -> List[Trajectory]:
    """Composite-state trajectories (robot, encoded features) for residual checks."""
    return [Trajectory(robot=tr.robot, objects=extract_features(enc, tr), inputs=tr.inputs,
                       dt=tr.dt, t0=tr.t0) for tr in ds.trajectories]


def mean_rollout_loss(op: LiftedOperator, dictionary: CompositeDictionary, enc: FeatureExtractor,
                      ds: ObservationDataset, n_step: int, workers: int = NUM_WORKERS) -> float:
    """Mean rollout loss over every window; read-only so windows may run on threads."""
    windows = ds.windows(n_step)
    if not windows:
        raise HorizonExceededError(f"no trajectory is longer than n_step={n_step}")

    def one(window):
        i, tau0 = window
        return rollout_loss(op, dictionary, enc, ds.trajectories[i], tau0, n_step)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            losses = list(pool.map(one, windows))
    else:
        losses = [one(w) for w in windows]
    return float(np.mean(losses))


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    loss: float
    version: int
    wall_ms: float


@dataclass
class TrainingResult:
    encoder: MlpEncoder
    operator: LiftedOperator
    dictionary: CompositeDictionary
    history: List[EpochRecord] = field(default_factory=list)

    @property
    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.history])


def train(ds: ObservationDataset, cfg: TrainingConfig, dict_r: Dictionary,
          enc: MlpEncoder) -> TrainingResult:
    """
    Run the alternating encoder / operator optimization

    Args:
        ds: observation dataset
        cfg: epochs, horizon, refit period, learning rate, batch and seed
        dict_r: robot-state dictionary; object features enter through the identity
        enc: initial encoder, left untouched (a copy is trained)

    Returns:
        TrainingResult with the trained encoder, the latest operator and the per-epoch history

    Raises:
        TrainingDivergedError: when an epoch's loss or gradient is non-finite
    """
    if dict_r.in_dim != ds.trajectories[0].n_robot:
        raise DimensionMismatchError(
            f"robot dictionary lifts {dict_r.in_dim}-dim states, dataset has {ds.trajectories[0].n_robot}")
    enc = enc.copy()
    dictionary = composite_dictionary(dict_r, enc)
    op = refit_operator(ds, enc, dictionary, version=1)
    result = TrainingResult(encoder=enc, operator=op, dictionary=dictionary)
    if cfg.n_epoch == 0:
        return result

    windows = ds.windows(cfg.n_step)
    if not windows:
        raise HorizonExceededError(f"no trajectory is longer than n_step={cfg.n_step}")
    rng = np.random.default_rng(cfg.seed)
    logger.info(f"--> Training encoder: {cfg.n_epoch} epochs, {len(windows)} windows, "
                f"refit every {cfg.refit_period}")

    for epoch in range(cfg.n_epoch):
        start = time.perf_counter()
        picks = rng.integers(len(windows), size=cfg.batch)
        total = 0.0
        grads = None
        for idx in picks:
            i, tau0 = windows[idx]
            loss, g = encoder_gradient(op, dictionary, enc, ds.trajectories[i], tau0, cfg.n_step)
            total += loss
            grads = g if grads is None else [(a + c, b + d) for (a, b), (c, d) in zip(grads, g)]
        finite_grads = all(np.all(np.isfinite(W)) and np.all(np.isfinite(b)) for W, b in grads)
        if not (np.isfinite(total) and finite_grads):
            raise TrainingDivergedError(epoch)
        enc.sgd_step(grads, cfg.learning_rate)

        if (epoch + 1) % cfg.refit_period == 0:
            op = refit_operator(ds, enc, dictionary, version=op.version + 1)
            logger.debug(f"--> Epoch {epoch}: refit operator v{op.version}, residual {op.residual:.3e}")

        result.history.append(EpochRecord(epoch=epoch, loss=total, version=op.version,
                                          wall_ms=elapsed_ms(start)))

    result.operator = op
    logger.info(f"--> Training done: first loss {result.history[0].loss:.4g}, "
                f"last loss {result.history[-1].loss:.4g}, operator v{op.version}")
    return result


def write_loss_csv(history: Sequence[EpochRecord], path: Union[str, Path],
                   deterministic: bool = False) -> Path:
    rows = [{"epoch": r.epoch, "rollout_loss": r.loss, "operator_version": r.version,
             "wall_ms": 0.0 if deterministic else r.wall_ms} for r in history]
    return write_csv(rows, path, columns=LOSS_COLUMNS)


def reference_gain(n_joints: int, n_features: int, gain: float) -> np.ndarray:
    """Maps stacked plane positions to a joint reference: feature k drives joint k mod n."""
    G = np.zeros((n_joints, n_features))
    for k in range(n_features):
        G[k % n_joints, k] = gain
    return G


def simulate_observation_dataset(model: ManipulatorModel, debris: DebrisField,
                                 spec: ObservationSpec, cfg: TrainingConfig) -> ObservationDataset:
    """
    Synthetic training data

    The arm tracks a joint reference G p(t) built from the obstacles' plane
    positions under computed-torque control, so the robot state is driven by
    the debris the encoder has to see. Each trajectory starts at a seeded
    random time with a perturbed initial configuration. Ground-truth object
    features are the plane positions of every obstacle.
    """
    if not debris.obstacles:
        raise InvalidInputError("training data needs at least one obstacle")
    n = model.n
    axes = list(PLANES[spec.plane])
    G = reference_gain(n, 2 * len(debris), cfg.reference_gain)

    def plane(arr: np.ndarray) -> np.ndarray:
        return arr[:, axes].reshape(-1)

    def reference(t):
        return (G @ plane(debris.centers(t)), G @ plane(debris.velocities(t)),
                G @ plane(debris.accelerations(t)))

    def torque(t, q, qd):
        q_ref, qd_ref, qdd_ref = reference(t)
        qdd = qdd_ref + cfg.kp * (q_ref - q) + cfg.kd * (qd_ref - qd)
        return inverse_dynamics(model, q, qd, qdd)

    rng = np.random.default_rng(cfg.seed)
    h = cfg.dt / cfg.substeps
    trajs = []
    for i in range(cfg.n_trajectories):
        t0 = float(rng.uniform(0.0, 10.0))
        q_ref, qd_ref, _ = reference(t0)
        q0 = q_ref + rng.normal(0.0, 0.1, size=n)
        run = integrate_rk4(model, q0, qd_ref, torque, h, cfg.steps * cfg.substeps, t0=t0)
        robot = run.robot[::cfg.substeps]
        times = t0 + np.arange(cfg.steps + 1) * cfg.dt
        spec_i = dataclasses.replace(spec, seed=derive_seed(cfg.seed, i))
        observations = np.stack([render_observation(debris, spec_i, t) for t in times])
        objects = np.stack([plane(debris.centers(t)) for t in times])
        trajs.append(ObservationTrajectory(robot=robot, observations=observations, objects=objects,
                                           dt=cfg.dt, t0=t0))
    logger.info(f"--> Simulated {len(trajs)} training trajectories of {cfg.steps + 1} samples")
    return ObservationDataset(tuple(trajs))


def initial_encoder(ds: ObservationDataset, n_features: int, cfg: TrainingConfig) -> MlpEncoder:
    projector = "mlp_tanh" if cfg.hidden else "linear"
    return MlpEncoder(encoder_config(ds.trajectories[0].observation_dim, n_features, cfg.hidden,
                                     projector, seed=cfg.seed))
