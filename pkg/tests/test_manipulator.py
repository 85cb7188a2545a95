import numpy as np
import pytest

from dk_rrt.errors import DimensionMismatchError, DivergenceError, InvalidInputError
from dk_rrt.sim.integrators import rk4_integrate
from dk_rrt.sim.manipulator import (Link, ManipulatorModel, PRESETS, bias_forces, end_effector,
                                    forward_dynamics, forward_kinematics, gravity_torque,
                                    integrate_rk4, inverse_dynamics, kinetic_energy, mass_matrix,
                                    planar_two_link, position_jacobian, potential_energy,
                                    six_dof_arm)

G = 9.81
L1, L2, M1, M2, LC1, LC2, I1, I2 = 1.0, 0.8, 1.5, 0.7, 0.45, 0.35, 0.12, 0.05


def _two_link(gravity=G):
    return planar_two_link(L1, L2, M1, M2, LC1, LC2, I1, I2, gravity=gravity)


def _analytic(q, qd, qdd, g=G):
    c2, s2 = np.cos(q[1]), np.sin(q[1])
    m11 = M1 * LC1 ** 2 + M2 * (L1 ** 2 + LC2 ** 2 + 2 * L1 * LC2 * c2) + I1 + I2
    m12 = M2 * (LC2 ** 2 + L1 * LC2 * c2) + I2
    m22 = M2 * LC2 ** 2 + I2
    M = np.array([[m11, m12], [m12, m22]])
    h = M2 * L1 * LC2 * s2
    C = np.array([-h * (2 * qd[0] * qd[1] + qd[1] ** 2), h * qd[0] ** 2])
    g1 = g * (M1 * LC1 + M2 * L1) * np.cos(q[0]) + M2 * g * LC2 * np.cos(q[0] + q[1])
    g2 = M2 * g * LC2 * np.cos(q[0] + q[1])
    return M, C, np.array([g1, g2]), M @ qdd + C + np.array([g1, g2])


def test_static_arm_without_gravity_needs_no_torque():
    model = six_dof_arm()
    tau = inverse_dynamics(model, np.linspace(-1, 1, 6), np.zeros(6), np.zeros(6))
    np.testing.assert_allclose(tau, 0.0, atol=1e-12)


def test_two_link_gravity_torque_closed_form(rng):
    model = _two_link()
    for _ in range(10):
        q = rng.uniform(-np.pi, np.pi, 2)
        _, _, grav, _ = _analytic(q, np.zeros(2), np.zeros(2))
        np.testing.assert_allclose(gravity_torque(model, q), grav, atol=1e-10)


def test_two_link_full_dynamics_closed_form(rng):
    model = _two_link()
    for _ in range(10):
        q, qd, qdd = rng.uniform(-2, 2, 2), rng.uniform(-2, 2, 2), rng.uniform(-2, 2, 2)
        M, _, _, tau = _analytic(q, qd, qdd)
        np.testing.assert_allclose(mass_matrix(model, q), M, atol=1e-10)
        np.testing.assert_allclose(inverse_dynamics(model, q, qd, qdd), tau, atol=1e-10)
        np.testing.assert_allclose(forward_dynamics(model, q, qd, tau), qdd, atol=1e-8)


def test_inverse_dynamics_decomposes_into_mass_and_bias(rng):
    model = six_dof_arm(gravity=(0.0, 0.0, -G))
    for _ in range(10):
        q, qd, qdd = rng.uniform(-2, 2, 6), rng.uniform(-1, 1, 6), rng.uniform(-1, 1, 6)
        expected = mass_matrix(model, q) @ qdd + bias_forces(model, q, qd)
        np.testing.assert_allclose(inverse_dynamics(model, q, qd, qdd), expected, atol=1e-6)


def test_forward_inverts_inverse_dynamics(rng):
    model = six_dof_arm(gravity=(0.0, 0.0, -G))
    for _ in range(10):
        q, qd, qdd = rng.uniform(-2, 2, 6), rng.uniform(-1, 1, 6), rng.uniform(-1, 1, 6)
        tau = inverse_dynamics(model, q, qd, qdd)
        np.testing.assert_allclose(forward_dynamics(model, q, qd, tau), qdd, atol=1e-8)


def test_mass_matrix_is_symmetric_positive_definite(rng):
    model = six_dof_arm()
    M = mass_matrix(model, rng.uniform(-2, 2, 6))
    np.testing.assert_array_equal(M, M.T)
    assert np.min(np.linalg.eigvalsh(M)) > 0


def test_zero_torque_rest_state_stays_at_rest():
    model = six_dof_arm()
    np.testing.assert_allclose(forward_dynamics(model, np.zeros(6), np.zeros(6), np.zeros(6)), 0.0, atol=1e-14)
    traj = integrate_rk4(model, np.full(6, 0.3), np.zeros(6), None, 0.01, 20)
    np.testing.assert_allclose(traj.robot, np.tile(np.concatenate([np.full(6, 0.3), np.zeros(6)]), (21, 1)),
                               atol=1e-14)


def test_two_link_forward_kinematics():
    model = _two_link()
    q = np.array([0.3, -0.7])
    expected = [L1 * np.cos(q[0]) + L2 * np.cos(q.sum()), L1 * np.sin(q[0]) + L2 * np.sin(q.sum()), 0.0]
    np.testing.assert_allclose(end_effector(model, q), expected, atol=1e-12)


def test_six_dof_home_pose():
    np.testing.assert_allclose(end_effector(six_dof_arm(), np.zeros(6)), [0.9, -0.1, 0.25], atol=1e-12)


def test_batched_kinematics_match_single(rng):
    model = six_dof_arm()
    Q = rng.uniform(-1, 1, size=(4, 6))
    R, o = forward_kinematics(model, Q)
    for k in range(4):
        Rk, ok = forward_kinematics(model, Q[k])
        np.testing.assert_allclose(R[k], Rk)
        np.testing.assert_allclose(o[k], ok)


def test_position_jacobian_matches_finite_differences(rng):
    model = six_dof_arm()
    q = rng.uniform(-1, 1, 6)
    h = 1e-6
    fd = np.column_stack([(end_effector(model, q + h * e) - end_effector(model, q - h * e)) / (2 * h)
                          for e in np.eye(6)])
    np.testing.assert_allclose(position_jacobian(model, q), fd, atol=1e-8)


def test_energy_is_conserved_without_gravity():
    model = _two_link(gravity=0.0)
    traj = integrate_rk4(model, [0.5, -0.3], [1.0, 0.5], None, 1e-3, 1000)
    energies = [kinetic_energy(model, s[:2], s[2:]) for s in traj.robot]
    assert abs(energies[-1] - energies[0]) / energies[0] < 1e-6


@pytest.mark.slow
def test_energy_is_conserved_over_ten_seconds():
    model = _two_link(gravity=0.0)
    traj = integrate_rk4(model, [0.5, -0.3], [1.0, 0.5], None, 1e-3, 10000)
    e0 = kinetic_energy(model, traj.robot[0, :2], traj.robot[0, 2:])
    e1 = kinetic_energy(model, traj.robot[-1, :2], traj.robot[-1, 2:])
    assert abs(e1 - e0) / e0 < 1e-6


def test_total_energy_is_conserved_with_gravity():
    model = _two_link()
    traj = integrate_rk4(model, [0.2, 0.4], [0.0, 0.0], None, 1e-3, 1000)

    def total(s):
        return kinetic_energy(model, s[:2], s[2:]) + potential_energy(model, s[:2])

    assert abs(total(traj.robot[-1]) - total(traj.robot[0])) < 1e-6


def test_rk4_converges_at_fourth_order():
    model = _two_link()
    q0, qd0 = [0.5, -0.3], [1.0, 0.5]
    reference = integrate_rk4(model, q0, qd0, None, 0.01 / 16, 1600).robot[-1]
    coarse = integrate_rk4(model, q0, qd0, None, 0.01, 100).robot[-1]
    fine = integrate_rk4(model, q0, qd0, None, 0.005, 200).robot[-1]
    ratio = np.linalg.norm(coarse - reference) / np.linalg.norm(fine - reference)
    assert ratio >= 15.0


def test_integrator_records_stage_one_torque():
    model = _two_link(gravity=0.0)
    traj = integrate_rk4(model, [0.0, 0.0], [0.0, 0.0], lambda t, q, qd: np.array([t, 1.0]), 0.1, 3)
    np.testing.assert_allclose(traj.inputs, [[0.0, 1.0], [0.1, 1.0], [0.2, 1.0]])
    assert traj.length == 4


def test_generic_rk4_reports_divergence():
    with pytest.raises(DivergenceError) as info:
        rk4_integrate(lambda t, y: 10.0 * y, np.ones(1), 0.0, 1.0, 50, bound=1e6)
    assert info.value.step >= 1
    exp_decay = rk4_integrate(lambda t, y: -y, np.ones(1), 0.0, 0.01, 100)
    assert exp_decay[-1, 0] == pytest.approx(np.exp(-1.0), rel=1e-9)


def test_invalid_models_and_inputs():
    with pytest.raises(InvalidInputError):
        Link(a=1.0, alpha=0.0, d=0.0, mass=-1.0)
    with pytest.raises(InvalidInputError):
        ManipulatorModel(links=())
    with pytest.raises(DimensionMismatchError):
        inverse_dynamics(_two_link(), [0.0], [0.0, 0.0], [0.0, 0.0])
    with pytest.raises(InvalidInputError):
        inverse_dynamics(_two_link(), [np.nan, 0.0], [0.0, 0.0], [0.0, 0.0])


def test_presets_build():
    assert set(PRESETS) == {"pendulum", "planar_two_link", "six_dof_arm"}
    assert [PRESETS[name]().n for name in sorted(PRESETS)] == [1, 2, 6]


@pytest.mark.parametrize("model", [planar_two_link(L1, L2, M1, M2, LC1, LC2, I1, I2), six_dof_arm()],
                         ids=["planar", "six_dof"])
def test_mass_matrix_rate_minus_twice_coriolis_is_skew(model, rng):
    h = 1e-3
    for _ in range(10):
        q, qd = rng.uniform(-2, 2, model.n), rng.uniform(-1, 1, model.n)
        # fourth-order central difference of M along qd
        M_dot = (-mass_matrix(model, q + 2 * h * qd) + 8 * mass_matrix(model, q + h * qd)
                 - 8 * mass_matrix(model, q - h * qd) + mass_matrix(model, q - 2 * h * qd)) / (12 * h)
        coriolis = inverse_dynamics(model, q, qd, np.zeros(model.n))
        assert abs(qd @ M_dot @ qd - 2 * qd @ coriolis) < 1e-8
