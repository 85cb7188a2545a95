"""
Snapshot data structures and least-squares Koopman / DMDc fitting.

Matrices follow the column convention: a snapshot matrix is n x N with one
state per column. Dictionaries work on row batches, so lifting transposes.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg as sla

from ..config import DIVERGENCE_BOUND, NORMALIZE_ROWS, PINV_TOL_REL, RIDGE_LAMBDA
from ..errors import (DimensionMismatchError, DivergenceError, EmptyDatasetError,
                      InvalidInputError)
from .serialization import load_container, save_container

logger = logging.getLogger(__name__)

TIME_RTOL = 1e-9


def as_vector(value, name: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(value, dtype=np.float64))
    if arr.ndim != 1:
        raise DimensionMismatchError(f"{name} must be a vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class CompositeState:
    """Robot joint state stacked with obstacle states at one instant."""
    robot: np.ndarray
    objects: np.ndarray
    time: float

    def __post_init__(self):
        object.__setattr__(self, "robot", as_vector(self.robot, "robot"))
        object.__setattr__(self, "objects", as_vector(self.objects, "objects"))
        if not np.isfinite(self.time):
            raise InvalidInputError("time must be finite")
        object.__setattr__(self, "time", float(self.time))

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.robot, self.objects])


@dataclass(frozen=True)
class Trajectory:
    """
    Uniformly sampled composite trajectory.

    robot is (T, n_robot), objects is (T, n_objects), inputs is (T-1, m).
    Timestamps are t0 + k * dt.
    """
    robot: np.ndarray
    objects: np.ndarray
    inputs: np.ndarray
    dt: float
    t0: float = 0.0

    def __post_init__(self):
        robot = np.asarray(self.robot, dtype=np.float64)
        if robot.ndim == 1:
            robot = robot[:, None]
        if robot.ndim != 2 or robot.shape[0] < 1:
            raise DimensionMismatchError(f"robot block must be (T, n_robot), got {robot.shape}")
        T = robot.shape[0]
        objects = np.zeros((T, 0)) if self.objects is None else np.asarray(self.objects, dtype=np.float64)
        if objects.size == 0:
            objects = np.zeros((T, 0))
        elif objects.ndim == 1:
            objects = objects[:, None]
        inputs = np.zeros((T - 1, 0)) if self.inputs is None else np.asarray(self.inputs, dtype=np.float64)
        if inputs.size == 0:
            inputs = np.zeros((T - 1, inputs.shape[-1] if inputs.ndim == 2 else 0))
        elif inputs.ndim == 1:
            inputs = inputs[:, None]
        if objects.shape[0] != T:
            raise DimensionMismatchError(f"objects block has {objects.shape[0]} rows, expected {T}")
        if inputs.shape[0] != T - 1:
            raise DimensionMismatchError(
                f"inputs must have exactly {T - 1} rows (states - 1), got {inputs.shape[0]}")
        for name, arr in (("robot", robot), ("objects", objects), ("inputs", inputs)):
            if not np.all(np.isfinite(arr)):
                raise InvalidInputError(f"trajectory {name} contains non-finite entries")
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise InvalidInputError(f"dt must be positive, got {self.dt}")
        object.__setattr__(self, "robot", robot)
        object.__setattr__(self, "objects", objects)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "dt", float(self.dt))
        object.__setattr__(self, "t0", float(self.t0))

    @classmethod
    def from_states(cls, states: Sequence[CompositeState], inputs, dt: float) -> "Trajectory":
        """Build from CompositeState objects, checking timestamps advance by dt."""
        if len(states) == 0:
            raise EmptyDatasetError("trajectory needs at least one state")
        times = np.array([s.time for s in states])
        steps = np.diff(times)
        if steps.size and not np.allclose(steps, dt, rtol=TIME_RTOL, atol=0.0):
            bad = int(np.argmax(np.abs(steps - dt)))
            raise InvalidInputError(
                f"timestamps must advance by dt={dt}; step {bad} advances by {steps[bad]}")
        dims = {(s.robot.size, s.objects.size) for s in states}
        if len(dims) != 1:
            raise DimensionMismatchError(f"state dimensions vary along the trajectory: {sorted(dims)}")
        robot = np.stack([s.robot for s in states])
        objects = np.stack([s.objects for s in states])
        return cls(robot=robot, objects=objects, inputs=inputs, dt=dt, t0=times[0])

    @property
    def length(self) -> int:
        return self.robot.shape[0]

    @property
    def n_robot(self) -> int:
        return self.robot.shape[1]

    @property
    def n_objects(self) -> int:
        return self.objects.shape[1]

    @property
    def n_inputs(self) -> int:
        return self.inputs.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.length)

    @property
    def state_matrix(self) -> np.ndarray:
        """(T, n) rows of stacked composite states."""
        return np.hstack([self.robot, self.objects])

    @property
    def states(self) -> List[CompositeState]:
        return [CompositeState(r, o, t) for r, o, t in zip(self.robot, self.objects, self.times)]


@dataclass(frozen=True)
class SnapshotDataset:
    """
    Shifted snapshot matrices pooled over trajectories.

    X, Xp are n x N, U is m x N. segments holds the column count contributed
    by each source trajectory, in order.
    """
    X: np.ndarray
    Xp: np.ndarray
    U: np.ndarray
    dt: float
    segments: Tuple[int, ...] = ()
    n_robot: Optional[int] = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        Xp = np.asarray(self.Xp, dtype=np.float64)
        U = np.asarray(self.U, dtype=np.float64)
        if U.size == 0:
            U = np.zeros((0, X.shape[1]))
        if X.ndim != 2 or X.shape != Xp.shape:
            raise DimensionMismatchError(f"X {X.shape} and Xp {Xp.shape} must have identical 2-D shapes")
        if U.ndim != 2 or U.shape[1] != X.shape[1]:
            raise DimensionMismatchError(f"U has {U.shape[-1]} columns, expected {X.shape[1]}")
        segments = tuple(int(s) for s in self.segments) or (X.shape[1],)
        if sum(segments) != X.shape[1]:
            raise DimensionMismatchError("segment lengths do not add up to the column count")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Xp", Xp)
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "segments", segments)

    @property
    def n_columns(self) -> int:
        return self.X.shape[1]

    @property
    def state_dim(self) -> int:
        return self.X.shape[0]

    @property
    def input_dim(self) -> int:
        return self.U.shape[0]

    def split_trajectories(self) -> List[Trajectory]:
        """Rebuild the source trajectories (timestamps restart at zero)."""
        n_robot = self.state_dim if self.n_robot is None else self.n_robot
        out = []
        start = 0
        for count in self.segments:
            cols = slice(start, start + count)
            states = np.hstack([self.X[:, cols], self.Xp[:, start + count - 1:start + count]]).T
            out.append(Trajectory(robot=states[:, :n_robot], objects=states[:, n_robot:],
                                  inputs=self.U[:, cols].T, dt=self.dt))
            start += count
        return out

    def save(self, path: Union[str, Path]) -> Path:
        meta = {"dt": self.dt, "n_robot": self.n_robot}
        arrays = {"X": self.X, "Xp": self.Xp, "U": self.U, "segments": np.array(self.segments)}
        return save_container(path, "snapshot_dataset", meta, arrays)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "SnapshotDataset":
        meta, arrays = load_container(path, "snapshot_dataset")
        return cls(X=arrays["X"], Xp=arrays["Xp"], U=arrays["U"], dt=meta["dt"],
                   segments=tuple(arrays["segments"].tolist()), n_robot=meta["n_robot"])


def build_snapshots(trajs: Sequence[Trajectory]) -> SnapshotDataset:
    """
    Stack (state, next state, input) triples from every trajectory

    Args:
        trajs: trajectories sharing dt and dimensions

    Returns:
        SnapshotDataset with no pair spanning a trajectory boundary
    """
    if len(trajs) == 0:
        raise EmptyDatasetError("build_snapshots needs at least one trajectory")
    ref = trajs[0]
    for i, tr in enumerate(trajs):
        if not np.isclose(tr.dt, ref.dt, rtol=TIME_RTOL, atol=0.0):
            raise DimensionMismatchError(f"trajectory {i} has dt={tr.dt}, expected {ref.dt}")
        if (tr.n_robot, tr.n_objects, tr.n_inputs) != (ref.n_robot, ref.n_objects, ref.n_inputs):
            raise DimensionMismatchError(
                f"trajectory {i} dimensions {(tr.n_robot, tr.n_objects, tr.n_inputs)} differ from "
                f"{(ref.n_robot, ref.n_objects, ref.n_inputs)}")
        if tr.length < 2:
            raise EmptyDatasetError(f"trajectory {i} has fewer than 2 states")
    mats = [tr.state_matrix for tr in trajs]
    X = np.hstack([m[:-1].T for m in mats])
    Xp = np.hstack([m[1:].T for m in mats])
    U = np.hstack([tr.inputs.T for tr in trajs])
    return SnapshotDataset(X=X, Xp=Xp, U=U, dt=ref.dt,
                           segments=tuple(tr.length - 1 for tr in trajs), n_robot=ref.n_robot)


def _check_matrix(M, tol_rel: float) -> np.ndarray:
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2:
        raise DimensionMismatchError(f"expected a matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise InvalidInputError("matrix contains non-finite entries")
    if not 0.0 < tol_rel < 1.0:
        raise InvalidInputError(f"tol_rel must lie in (0, 1), got {tol_rel}")
    return M


def pinv(M, tol_rel: float = PINV_TOL_REL) -> np.ndarray:
    """
    Moore-Penrose pseudoinverse by SVD

    Args:
        M: finite matrix
        tol_rel: singular values below tol_rel * sigma_max are treated as zero

    Returns:
        M^+ with shape M.T.shape
    """
    M = _check_matrix(M, tol_rel)
    if M.size == 0:
        return np.zeros(M.T.shape)
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    cutoff = tol_rel * s[0]
    s_inv = np.zeros_like(s)
    keep = s > cutoff
    s_inv[keep] = 1.0 / s[keep]
    return (Vt.T * s_inv) @ U.T


def numerical_rank(M, tol_rel: float = PINV_TOL_REL) -> int:
    M = _check_matrix(M, tol_rel)
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    return int(np.sum(s > tol_rel * s[0]))


@dataclass(frozen=True)
class LiftedOperator:
    """
    Fitted lifted dynamics z' = Gamma z + Delta u with decoder chi = Pi z.

    Gamma is rho x rho, Delta is rho x m, Pi is n x rho.
    """
    Gamma: np.ndarray
    Delta: np.ndarray
    Pi: np.ndarray
    dict_id: str
    dt: float
    residual: float = 0.0
    rank_deficient: bool = False
    rank: int = 0
    version: int = 0

    def __post_init__(self):
        Gamma = np.asarray(self.Gamma, dtype=np.float64)
        Delta = np.asarray(self.Delta, dtype=np.float64)
        Pi = np.asarray(self.Pi, dtype=np.float64)
        if Gamma.ndim != 2 or Gamma.shape[0] != Gamma.shape[1]:
            raise DimensionMismatchError(f"Gamma must be square, got {Gamma.shape}")
        rho = Gamma.shape[0]
        if Delta.size == 0:
            Delta = np.zeros((rho, 0))
        if Delta.ndim != 2 or Delta.shape[0] != rho:
            raise DimensionMismatchError(f"Delta must have {rho} rows, got {Delta.shape}")
        if Pi.ndim != 2 or Pi.shape[1] != rho:
            raise DimensionMismatchError(f"Pi must have {rho} columns, got {Pi.shape}")
        object.__setattr__(self, "Gamma", Gamma)
        object.__setattr__(self, "Delta", Delta)
        object.__setattr__(self, "Pi", Pi)

    @property
    def lifted_dim(self) -> int:
        return self.Gamma.shape[0]

    @property
    def input_dim(self) -> int:
        return self.Delta.shape[1]

    @property
    def state_dim(self) -> int:
        return self.Pi.shape[0]

    @property
    def theta(self) -> np.ndarray:
        return np.hstack([self.Gamma, self.Delta])

    def eigenvalues(self) -> np.ndarray:
        """Discrete-time spectrum of Gamma, largest modulus first."""
        lam = np.linalg.eigvals(self.Gamma)
        return lam[np.argsort(-np.abs(lam), kind="stable")]

    def continuous_eigenvalues(self) -> np.ndarray:
        return np.log(self.eigenvalues().astype(complex)) / self.dt

    def save(self, path: Union[str, Path]) -> Path:
        meta = {"dict_id": self.dict_id, "dt": self.dt, "residual": self.residual,
                "rank_deficient": self.rank_deficient, "rank": self.rank, "version": self.version}
        return save_container(path, "lifted_operator", meta,
                              {"Gamma": self.Gamma, "Delta": self.Delta, "Pi": self.Pi})

    @classmethod
    def load(cls, path: Union[str, Path]) -> "LiftedOperator":
        meta, arrays = load_container(path, "lifted_operator")
        return cls(Gamma=arrays["Gamma"], Delta=arrays["Delta"], Pi=arrays["Pi"], **meta)


def lift_columns(dictionary, X: np.ndarray) -> np.ndarray:
    """Lift an n x N snapshot matrix to rho x N."""
    return dictionary.lift_batch(np.asarray(X).T).T


def decoder_matrix(dictionary, X: np.ndarray, Z: np.ndarray, tol_rel: float = PINV_TOL_REL) -> np.ndarray:
    """
    Pi selecting the raw-state block, or the least-squares decoder X Z^+
    when the dictionary does not embed the state.
    """
    if dictionary.raw_indices is not None:
        Pi = np.zeros((dictionary.in_dim, dictionary.out_dim))
        Pi[np.arange(dictionary.in_dim), dictionary.raw_indices] = 1.0
        return Pi
    return X @ pinv(Z, tol_rel)


def fit_edmd(ds: SnapshotDataset, dictionary, tol_rel: float = PINV_TOL_REL,
             ridge: float = RIDGE_LAMBDA, normalize: bool = NORMALIZE_ROWS,
             version: int = 0) -> LiftedOperator:
    """
    Least-squares fit of Theta = [Gamma Delta] minimizing ||Z' - Theta Omega||_F

    Args:
        ds: snapshot dataset
        dictionary: observable dictionary lifting ds' state dimension
        tol_rel: pseudoinverse cutoff
        ridge: lambda of the optional lambda * ||Theta||_F^2 penalty, solved on the raw Omega
        normalize: scale the rows of Omega by their RMS before the pseudoinverse
        version: operator version stamped on the result

    Returns:
        LiftedOperator; rank_deficient is set when rank(Omega) < rho + m
    """
    if ds.n_columns < 1:
        raise EmptyDatasetError("fit_edmd needs at least one snapshot column")
    if ds.state_dim != dictionary.in_dim:
        raise DimensionMismatchError(
            f"dictionary lifts {dictionary.in_dim}-dim states, dataset has {ds.state_dim}")
    if ridge < 0:
        raise InvalidInputError(f"ridge must be non-negative, got {ridge}")

    Z = lift_columns(dictionary, ds.X)
    Zp = lift_columns(dictionary, ds.Xp)
    Omega = np.vstack([Z, ds.U])
    rho, m = Z.shape[0], ds.input_dim

    rank = numerical_rank(Omega, tol_rel)
    rank_deficient = rank < rho + m

    if ridge > 0:
        gram = Omega @ Omega.T + ridge * np.eye(rho + m)
        Theta = sla.solve(gram, Omega @ Zp.T, assume_a="pos").T
    elif normalize:
        scale = np.sqrt(np.mean(Omega ** 2, axis=1))
        scale[scale == 0.0] = 1.0
        Theta = (Zp @ pinv(Omega / scale[:, None], tol_rel)) / scale[None, :]
    else:
        Theta = Zp @ pinv(Omega, tol_rel)

    residual = float(np.linalg.norm(Zp - Theta @ Omega, "fro"))
    Pi = decoder_matrix(dictionary, ds.X, Z, tol_rel)

    if rank_deficient:
        logger.warning(f"--> Omega is rank deficient ({rank} < {rho + m}); minimum-norm solution returned")
    logger.debug(f"--> Fitted EDMD operator rho={rho} m={m} columns={ds.n_columns} residual={residual:.3e}")
    return LiftedOperator(Gamma=Theta[:, :rho], Delta=Theta[:, rho:], Pi=Pi,
                          dict_id=dictionary.dict_id, dt=ds.dt, residual=residual,
                          rank_deficient=rank_deficient, rank=rank, version=version)


def step_lifted(op: LiftedOperator, z, u=None) -> np.ndarray:
    """One lifted step Gamma z + Delta u."""
    z = np.asarray(z, dtype=np.float64)
    u = np.zeros(op.input_dim) if u is None else np.atleast_1d(np.asarray(u, dtype=np.float64))
    if z.shape != (op.lifted_dim,):
        raise DimensionMismatchError(f"lifted vector must have shape ({op.lifted_dim},), got {z.shape}")
    if u.shape != (op.input_dim,):
        raise DimensionMismatchError(f"input must have shape ({op.input_dim},), got {u.shape}")
    return op.Gamma @ z + op.Delta @ u


def input_sequence(input_dim: int, us, k: int) -> np.ndarray:
    """(>= k, input_dim) input rows; None means a zero sequence."""
    if us is None:
        return np.zeros((k, input_dim))
    us = np.asarray(us, dtype=np.float64)
    if us.ndim == 1:
        us = us.reshape(-1, input_dim) if input_dim else np.zeros((len(us), 0))
    if us.shape[0] < k:
        raise InvalidInputError(f"need at least {k} inputs, got {us.shape[0]}")
    if us.shape[1] != input_dim:
        raise DimensionMismatchError(f"inputs must have {input_dim} columns, got {us.shape[1]}")
    return us


def predict_rollout(op: LiftedOperator, dictionary, chi0, us=None, k: int = 1,
                    relift: bool = True) -> np.ndarray:
    """
    Roll the composite predictor forward k steps

    Args:
        op: fitted operator
        dictionary: the dictionary op was fitted with
        chi0: initial state
        us: (>= k, m) input sequence, None for autonomous systems
        k: number of steps, >= 1
        relift: project then re-lift every step; False keeps the pure lifted rollout

    Returns:
        (k, n) predicted states
    """
    if dictionary.dict_id != op.dict_id:
        raise InvalidInputError("operator was fitted with a different dictionary")
    if k < 1:
        raise InvalidInputError(f"k must be >= 1, got {k}")
    chi = as_vector(chi0, "chi0")
    if chi.size != dictionary.in_dim:
        raise DimensionMismatchError(f"chi0 must have {dictionary.in_dim} entries, got {chi.size}")
    us = input_sequence(op.input_dim, us, k)

    out = np.empty((k, op.state_dim))
    z = dictionary.lift(chi)
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(k):
            z = op.Gamma @ z + op.Delta @ us[i]
            chi = op.Pi @ z
            if not (np.all(np.isfinite(z)) and np.all(np.isfinite(chi))) \
                    or np.max(np.abs(chi)) > DIVERGENCE_BOUND:
                raise DivergenceError(i + 1, f"Prediction diverged at step {i + 1}")
            out[i] = chi
            if relift:
                z = dictionary.lift(chi)
                if not np.all(np.isfinite(z)):
                    raise DivergenceError(i + 1, f"Re-lift produced non-finite values at step {i + 1}")
    return out


def prediction_loss(op: LiftedOperator, dictionary, trajs: Sequence[Trajectory]) -> float:
    """Sum of squared one-step lifted errors ||phi(x') - K phi(x)||^2 over all trajectories."""
    ds = build_snapshots(trajs)
    if ds.state_dim != dictionary.in_dim or dictionary.out_dim != op.lifted_dim:
        raise DimensionMismatchError("trajectories, dictionary and operator dimensions disagree")
    if ds.input_dim != op.input_dim:
        raise DimensionMismatchError(f"trajectories carry {ds.input_dim} inputs, operator expects {op.input_dim}")
    Z = lift_columns(dictionary, ds.X)
    Zp = lift_columns(dictionary, ds.Xp)
    R = Zp - op.Gamma @ Z - op.Delta @ ds.U
    return float(np.sum(R ** 2))
