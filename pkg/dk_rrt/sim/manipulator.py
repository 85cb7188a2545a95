"""
Serial manipulator model (standard Denavit-Hartenberg) with recursive
Newton-Euler inverse dynamics, Cholesky forward dynamics and RK4 rollout.
"""
import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from ..config import DIVERGENCE_BOUND, JOINT_VELOCITY_LIMIT, LINK_RADIUS
from ..errors import (ConditioningError, DimensionMismatchError, DivergenceError,
                      InvalidInputError)
from ..koopman.core import Trajectory
from .integrators import rk4_step

logger = logging.getLogger(__name__)

TorqueFn = Callable[[float, np.ndarray, np.ndarray], np.ndarray]


def midpoint_com(a: float, alpha: float, d: float) -> np.ndarray:
    """Midpoint between joint origins i and i+1, expressed in frame i+1."""
    return -0.5 * np.array([a, d * np.sin(alpha), d * np.cos(alpha)])


@dataclass(frozen=True, eq=False)
class Link:
    a: float
    alpha: float
    d: float
    offset: float = 0.0
    mass: float = 1.0
    com: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    inertia: Tuple[Tuple[float, ...], ...] = ((1e-3, 0, 0), (0, 1e-3, 0), (0, 0, 1e-3))
    qlim: Tuple[float, float] = (-np.pi, np.pi)
    qd_max: float = JOINT_VELOCITY_LIMIT
    radius: float = LINK_RADIUS

    def __post_init__(self):
        inertia = np.asarray(self.inertia, dtype=np.float64)
        if inertia.shape != (3, 3):
            raise DimensionMismatchError(f"inertia must be 3x3, got {inertia.shape}")
        if not np.allclose(inertia, inertia.T, atol=1e-12):
            raise InvalidInputError("inertia tensor must be symmetric")
        if np.min(np.linalg.eigvalsh(inertia)) <= 0:
            raise InvalidInputError("inertia tensor must be positive definite")
        if self.mass <= 0:
            raise InvalidInputError(f"link mass must be positive, got {self.mass}")
        if not self.qlim[0] < self.qlim[1]:
            raise InvalidInputError(f"joint limits must be increasing, got {self.qlim}")
        if self.qd_max <= 0 or self.radius < 0:
            raise InvalidInputError("velocity bound must be positive and radius non-negative")

    @property
    def inertia_matrix(self) -> np.ndarray:
        return np.asarray(self.inertia, dtype=np.float64)

    @property
    def com_vector(self) -> np.ndarray:
        return np.asarray(self.com, dtype=np.float64)


@dataclass(frozen=True, eq=False)
class ManipulatorModel:
    links: Tuple[Link, ...]
    gravity: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    name: str = "arm"

    def __post_init__(self):
        object.__setattr__(self, "links", tuple(self.links))
        if not 1 <= len(self.links) <= 6:
            raise InvalidInputError(f"1 to 6 links are supported, got {len(self.links)}")
        if np.asarray(self.gravity).shape != (3,):
            raise DimensionMismatchError("gravity must be a 3-vector")

    @property
    def n(self) -> int:
        return len(self.links)

    @property
    def g(self) -> np.ndarray:
        return np.asarray(self.gravity, dtype=np.float64)

    @property
    def qlim(self) -> np.ndarray:
        """(n, 2) joint limits."""
        return np.array([l.qlim for l in self.links], dtype=np.float64)

    @property
    def qd_max(self) -> np.ndarray:
        return np.array([l.qd_max for l in self.links], dtype=np.float64)

    @property
    def radii(self) -> np.ndarray:
        return np.array([l.radius for l in self.links], dtype=np.float64)

    def within_limits(self, q: np.ndarray) -> bool:
        lim = self.qlim
        return bool(np.all(q >= lim[:, 0]) and np.all(q <= lim[:, 1]))

    def _check(self, *vectors) -> List[np.ndarray]:
        out = []
        for v in vectors:
            v = np.asarray(v, dtype=np.float64)
            if v.shape[-1] != self.n:
                raise DimensionMismatchError(f"expected {self.n} joint values, got shape {v.shape}")
            if not np.all(np.isfinite(v)):
                raise InvalidInputError("joint values must be finite")
            out.append(v)
        return out


def forward_kinematics(model: ManipulatorModel, q: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Frame rotations and origins for one or many configurations

    Args:
        model: manipulator
        q: (n,) or (B, n) joint angles

    Returns:
        R (..., n+1, 3, 3) and o (..., n+1, 3); index 0 is the base frame
    """
    q = np.asarray(q, dtype=np.float64)
    single = q.ndim == 1
    Q = np.atleast_2d(q)
    B = Q.shape[0]
    R = np.empty((B, model.n + 1, 3, 3))
    o = np.empty((B, model.n + 1, 3))
    R[:, 0] = np.eye(3)
    o[:, 0] = 0.0
    for i, link in enumerate(model.links):
        theta = Q[:, i] + link.offset
        ct, st = np.cos(theta), np.sin(theta)
        ca, sa = np.cos(link.alpha), np.sin(link.alpha)
        A = np.zeros((B, 3, 3))
        A[:, 0, 0], A[:, 0, 1], A[:, 0, 2] = ct, -st * ca, st * sa
        A[:, 1, 0], A[:, 1, 1], A[:, 1, 2] = st, ct * ca, -ct * sa
        A[:, 2, 1], A[:, 2, 2] = sa, ca
        p = np.stack([link.a * ct, link.a * st, np.full(B, link.d)], axis=1)
        R[:, i + 1] = R[:, i] @ A
        o[:, i + 1] = o[:, i] + np.einsum("bij,bj->bi", R[:, i], p)
    if single:
        return R[0], o[0]
    return R, o


def joint_positions(model: ManipulatorModel, q: np.ndarray) -> np.ndarray:
    """(..., n+1, 3) joint origins; link i spans rows i and i+1."""
    return forward_kinematics(model, q)[1]


def end_effector(model: ManipulatorModel, q: np.ndarray) -> np.ndarray:
    return joint_positions(model, q)[..., -1, :]


def position_jacobian(model: ManipulatorModel, q: np.ndarray) -> np.ndarray:
    """(3, n) end-effector linear velocity Jacobian."""
    (q,) = model._check(q)
    R, o = forward_kinematics(model, q)
    z = R[:-1, :, 2]
    return np.cross(z, o[-1] - o[:-1]).T


def _rnea(model: ManipulatorModel, q: np.ndarray, qd: np.ndarray, qdd: np.ndarray,
          a0: np.ndarray) -> np.ndarray:
    """
    World-frame Newton-Euler recursion at one configuration, batched over
    rows of (qd, qdd, base acceleration a0). Gravity enters as a0 = -g.
    """
    R, o = forward_kinematics(model, q)
    B = qd.shape[0]
    n = model.n
    z = R[:n, :, 2]
    w = np.zeros((B, 3))
    dw = np.zeros((B, 3))
    a_o = np.array(a0, dtype=np.float64)
    F = np.empty((n, B, 3))
    N = np.empty((n, B, 3))
    pcs = np.empty((n, 3))
    for i, link in enumerate(model.links):
        w_prev = w
        w = w_prev + qd[:, i:i + 1] * z[i]
        dw = dw + qdd[:, i:i + 1] * z[i] + np.cross(w_prev, qd[:, i:i + 1] * z[i])
        pc = o[i + 1] + R[i + 1] @ link.com_vector
        pcs[i] = pc
        rc = pc - o[i]
        a_c = a_o + np.cross(dw, rc) + np.cross(w, np.cross(w, rc))
        I_w = R[i + 1] @ link.inertia_matrix @ R[i + 1].T
        F[i] = link.mass * a_c
        N[i] = dw @ I_w.T + np.cross(w, w @ I_w.T)
        r_next = o[i + 1] - o[i]
        a_o = a_o + np.cross(dw, r_next) + np.cross(w, np.cross(w, r_next))

    tau = np.empty((B, n))
    f = np.zeros((B, 3))
    m = np.zeros((B, 3))
    for i in reversed(range(n)):
        m = N[i] + m + np.cross(pcs[i] - o[i], F[i]) + np.cross(o[i + 1] - o[i], f)
        f = F[i] + f
        tau[:, i] = m @ z[i]
    return tau


def inverse_dynamics(model: ManipulatorModel, q, qd, qdd) -> np.ndarray:
    """
    Joint torques M(q) qdd + C(q, qd) qd + G(q) by recursive Newton-Euler

    Args:
        model: manipulator
        q, qd, qdd: (n,) joint angles, rates and accelerations

    Returns:
        (n,) torques in N m
    """
    q, qd, qdd = model._check(q, qd, qdd)
    return _rnea(model, q, qd[None, :], qdd[None, :], -model.g[None, :])[0]


def mass_matrix(model: ManipulatorModel, q) -> np.ndarray:
    (q,) = model._check(q)
    n = model.n
    # column j is the torque for a unit acceleration of joint j, no velocity or gravity
    M = _rnea(model, q, np.zeros((n, n)), np.eye(n), np.zeros((n, 3))).T
    return 0.5 * (M + M.T)


def bias_forces(model: ManipulatorModel, q, qd) -> np.ndarray:
    """C(q, qd) qd + G(q)."""
    q, qd = model._check(q, qd)
    return _rnea(model, q, qd[None, :], np.zeros((1, model.n)), -model.g[None, :])[0]


def gravity_torque(model: ManipulatorModel, q) -> np.ndarray:
    (q,) = model._check(q)
    return _rnea(model, q, np.zeros((1, model.n)), np.zeros((1, model.n)), -model.g[None, :])[0]


def forward_dynamics(model: ManipulatorModel, q, qd, tau) -> np.ndarray:
    """Solve M(q) qdd = tau - C qd - G with a Cholesky factorization."""
    q, qd, tau = model._check(q, qd, tau)
    M = mass_matrix(model, q)
    h = bias_forces(model, q, qd)
    try:
        factor = cho_factor(M)
    except LinAlgError as e:
        raise ConditioningError(f"mass matrix is not positive definite at q={q}") from e
    return cho_solve(factor, tau - h)


def kinetic_energy(model: ManipulatorModel, q, qd) -> float:
    q, qd = model._check(q, qd)
    return 0.5 * float(qd @ mass_matrix(model, q) @ qd)


def potential_energy(model: ManipulatorModel, q) -> float:
    (q,) = model._check(q)
    R, o = forward_kinematics(model, q)
    total = 0.0
    for i, link in enumerate(model.links):
        pc = o[i + 1] + R[i + 1] @ link.com_vector
        total -= link.mass * float(model.g @ pc)
    return total


def integrate_rk4(model: ManipulatorModel, q0, qd0, torque_fn: Optional[TorqueFn], dt: float,
                  steps: int, t0: float = 0.0, bound: float = DIVERGENCE_BOUND) -> Trajectory:
    """
    Classical RK4 on the 2n-dimensional state [q, qd]

    Args:
        model: manipulator
        q0, qd0: initial joint state
        torque_fn: tau(t, q, qd); None applies zero torque
        dt: step, > 0
        steps: number of steps
        t0: start time
        bound: state norm treated as divergence

    Returns:
        Trajectory with robot rows [q, qd] and the stage-one torque of each step as input
    """
    if not dt > 0:
        raise InvalidInputError(f"dt must be positive, got {dt}")
    q0, qd0 = model._check(q0, qd0)
    n = model.n
    if torque_fn is None:
        def torque_fn(t, q, qd):
            return np.zeros(n)

    def field_fn(t, y):
        q, qd = y[:n], y[n:]
        return np.concatenate([qd, forward_dynamics(model, q, qd, torque_fn(t, q, qd))])

    states = np.empty((steps + 1, 2 * n))
    inputs = np.empty((steps, n))
    y = np.concatenate([q0, qd0])
    states[0] = y
    for k in range(steps):
        t = t0 + k * dt
        inputs[k] = torque_fn(t, y[:n], y[n:])
        y = rk4_step(field_fn, t, y, dt)
        if not np.all(np.isfinite(y)) or np.linalg.norm(y) > bound:
            raise DivergenceError(k + 1, f"Manipulator simulation diverged at step {k + 1}")
        states[k + 1] = y
    return Trajectory(robot=states, objects=None, inputs=inputs, dt=dt, t0=t0)


def _rod_inertia(mass: float, length: float) -> np.ndarray:
    I = mass * max(length, 0.05) ** 2 / 12.0
    return np.diag([I, I, I]) + 1e-4 * np.eye(3)


def pendulum(length: float = 1.0, mass: float = 1.0, gravity: float = 9.81) -> ManipulatorModel:
    """Single link in the xy plane; q = 0 hangs along -y, gravity along -y."""
    link = Link(a=length, alpha=0.0, d=0.0, offset=-np.pi / 2, mass=mass, com=(0.0, 0.0, 0.0),
                inertia=np.diag([1e-4, 1e-4, 1e-4]), qlim=(-2 * np.pi, 2 * np.pi), qd_max=10.0)
    return ManipulatorModel(links=(link,), gravity=(0.0, -gravity, 0.0), name="pendulum")


def planar_two_link(l1: float = 1.0, l2: float = 1.0, m1: float = 1.0, m2: float = 1.0,
                    lc1: float = 0.5, lc2: float = 0.5, I1: float = 1.0 / 12, I2: float = 1.0 / 12,
                    gravity: float = 0.0, radius: float = LINK_RADIUS) -> ManipulatorModel:
    """
    Planar arm rotating about z in the xy plane. Gravity, when set, points
    along -y. I1, I2 are the in-plane moments about each centre of mass.
    """
    links = (
        Link(a=l1, alpha=0.0, d=0.0, mass=m1, com=(-(l1 - lc1), 0.0, 0.0),
             inertia=np.diag([0.01 * I1, I1, I1]), radius=radius),
        Link(a=l2, alpha=0.0, d=0.0, mass=m2, com=(-(l2 - lc2), 0.0, 0.0),
             inertia=np.diag([0.01 * I2, I2, I2]), radius=radius),
    )
    return ManipulatorModel(links=links, gravity=(0.0, -gravity, 0.0), name="planar_two_link")


SIX_DOF_DH = (
    # a, alpha, d, mass
    (0.0, np.pi / 2, 0.4, 4.0),
    (0.5, 0.0, 0.0, 3.0),
    (0.4, 0.0, 0.0, 2.0),
    (0.0, np.pi / 2, 0.0, 1.0),
    (0.0, -np.pi / 2, 0.15, 1.0),
    (0.0, 0.0, 0.1, 0.5),
)


def six_dof_arm(gravity: Sequence[float] = (0.0, 0.0, 0.0), radius: float = LINK_RADIUS,
                qd_max: float = JOINT_VELOCITY_LIMIT) -> ManipulatorModel:
    """Unit-scale six-joint arm; end effector at about (0.9, -0.1, 0.25) for q = 0."""
    links = tuple(
        Link(a=a, alpha=alpha, d=d, mass=m, com=tuple(midpoint_com(a, alpha, d)),
             inertia=_rod_inertia(m, np.hypot(a, d)), qd_max=qd_max, radius=radius)
        for a, alpha, d, m in SIX_DOF_DH
    )
    return ManipulatorModel(links=links, gravity=tuple(gravity), name="six_dof_arm")


PRESETS = {
    "pendulum": pendulum,
    "planar_two_link": planar_two_link,
    "six_dof_arm": six_dof_arm,
}
