import numpy as np
import pytest
from scipy.linalg import expm

from dk_rrt.errors import InvalidInputError
from dk_rrt.koopman.core import SnapshotDataset, Trajectory, build_snapshots, pinv
from dk_rrt.koopman.dual_data import (CollocationSet, GeneratorOperator, ResidualOperator,
                                      fit_generator, fit_residual, predict_composed, predict_known)
from dk_rrt.koopman.observables import IdentityDictionary, affine_dictionary
from dk_rrt.sim.integrators import rk4_integrate
from dk_rrt.sim.manipulator import forward_dynamics, integrate_rk4, pendulum

A3 = np.array([[-0.1, 1.0, 0.0], [-1.0, -0.1, 0.3], [0.0, -0.3, -0.2]])


def _linear_field(A):
    return lambda x, u: A @ x


def _flow_trajectories(field, x0s, dtau, steps, substeps=20):
    trajs = []
    for x0 in x0s:
        states = rk4_integrate(lambda t, y: field(y), x0, 0.0, dtau / substeps, steps * substeps)
        trajs.append(Trajectory(robot=states[::substeps], objects=None, inputs=None, dt=dtau))
    return trajs


def test_generator_recovers_linear_field():
    d = IdentityDictionary(3)
    cs = CollocationSet.sample(_linear_field(A3), -np.ones(3), np.ones(3), n=200, seed=0)
    gen = fit_generator(cs, d, 0.1)
    assert np.max(np.abs(gen.L - A3)) < 1e-8
    np.testing.assert_allclose(gen.half_step, expm(A3 * 0.05), atol=1e-8)


def test_zero_field_gives_identity_half_step():
    d = IdentityDictionary(2)
    cs = CollocationSet.sample(lambda x, u: np.zeros(2), -np.ones(2), np.ones(2), n=50, seed=1)
    gen = fit_generator(cs, d, 0.2)
    np.testing.assert_allclose(gen.L, 0.0, atol=1e-14)
    np.testing.assert_allclose(gen.half_step, np.eye(2), atol=1e-14)


def test_oscillator_half_step_is_a_rotation():
    omega, dtau = 2.0, 0.1
    A = np.array([[0.0, 1.0], [-omega ** 2, 0.0]])
    cs = CollocationSet.sample(_linear_field(A), [-1.0, -1.0], [1.0, 1.0], n=100, seed=2)
    gen = fit_generator(cs, IdentityDictionary(2), dtau)
    s = omega * dtau / 2
    expected = np.array([[np.cos(s), np.sin(s) / omega], [-omega * np.sin(s), np.cos(s)]])
    np.testing.assert_allclose(gen.half_step, expected, atol=1e-8)


def test_inputs_are_stacked_and_held_constant():
    B = np.array([[0.0], [1.0]])
    A = np.array([[0.0, 1.0], [-1.0, 0.0]])
    cs = CollocationSet.sample(lambda x, u: A @ x + B @ u, [-1.0, -1.0], [1.0, 1.0], [-1.0], [1.0], n=100, seed=3)
    gen = fit_generator(cs, IdentityDictionary(2), 0.1)
    assert gen.n_inputs == 1
    np.testing.assert_allclose(gen.L[:2], np.hstack([A, B]), atol=1e-8)
    np.testing.assert_allclose(gen.L[2], 0.0, atol=1e-12)


def test_residual_is_identity_when_data_follow_the_known_field():
    d = IdentityDictionary(3)
    dtau = 0.1
    gen = fit_generator(CollocationSet.sample(_linear_field(A3), -np.ones(3), np.ones(3), n=200, seed=0), d, dtau)
    rng = np.random.default_rng(4)
    ds = build_snapshots(_flow_trajectories(lambda x: A3 @ x, rng.uniform(-1, 1, size=(5, 3)), dtau, 30))
    res = fit_residual(gen, ds, d)
    np.testing.assert_allclose(res.H, np.eye(3), atol=1e-6)


def test_identity_generator_reduces_to_plain_dmd(rng):
    d = IdentityDictionary(2)
    gen = GeneratorOperator(L=np.zeros((2, 2)), half_step=np.eye(2), dtau=0.1, dict_id=d.dict_id)
    X = rng.normal(size=(2, 40))
    Xp = np.array([[0.9, 0.2], [-0.1, 0.8]]) @ X + 0.01 * rng.normal(size=(2, 40))
    res = fit_residual(gen, SnapshotDataset(X=X, Xp=Xp, U=np.zeros((0, 40)), dt=0.1), d)
    np.testing.assert_allclose(res.H, Xp @ pinv(X), atol=1e-12)


def test_split_step_error_shrinks_with_the_step():
    # known part A3, unknown part B; the residual is the exact flow of B
    B = np.array([[0.0, 0.0, 0.4], [0.5, 0.0, 0.0], [0.0, -0.6, 0.1]])
    d = IdentityDictionary(3)
    cs = CollocationSet.sample(_linear_field(A3), -np.ones(3), np.ones(3), n=200, seed=9)

    def one_step_error(dtau):
        gen = fit_generator(cs, d, dtau)
        res = ResidualOperator(H=expm(B * dtau), dtau=dtau, dict_id=d.dict_id)
        composed = np.array([predict_composed(gen, res, d, e, k=1)[0] for e in np.eye(3)]).T
        return np.linalg.norm(composed - expm((A3 + B) * dtau))

    coarse, fine = one_step_error(0.2), one_step_error(0.1)
    assert coarse > 1e-8
    assert coarse / fine >= 3.5


def test_fitted_residual_minimizes_the_sandwiched_error(rng):
    d = IdentityDictionary(3)
    dtau = 0.1
    gen = fit_generator(CollocationSet.sample(_linear_field(A3), -np.ones(3), np.ones(3), n=200, seed=0), d, dtau)
    X = rng.normal(size=(3, 60))
    Xp = expm((A3 + 0.2 * np.eye(3)) * dtau) @ X + 0.01 * rng.normal(size=(3, 60))
    res = fit_residual(gen, SnapshotDataset(X=X, Xp=Xp, U=np.zeros((0, 60)), dt=dtau), d)
    K = gen.half_step

    def sandwiched(H):
        return np.linalg.norm(K @ H @ K @ X - Xp)

    base = sandwiched(res.H)
    for _ in range(20):
        bump = rng.normal(size=res.H.shape)
        bump *= 1e-3 / np.linalg.norm(bump)
        assert sandwiched(res.H + bump) >= base


def test_composed_prediction_with_identity_residual_follows_the_flow():
    d = IdentityDictionary(3)
    dtau = 0.1
    gen = fit_generator(CollocationSet.sample(_linear_field(A3), -np.ones(3), np.ones(3), n=200, seed=0), d, dtau)
    res = ResidualOperator(H=np.eye(3), dtau=dtau, dict_id=d.dict_id)
    x0 = np.array([0.5, -0.2, 0.1])
    pred = predict_composed(gen, res, d, x0, k=10)
    step = expm(A3 * dtau)
    x = x0.copy()
    for k in range(10):
        x = step @ x
        np.testing.assert_allclose(pred[k], x, atol=1e-8)
    np.testing.assert_allclose(predict_known(gen, d, x0, k=10), pred, atol=1e-12)


def test_all_identity_single_step_keeps_the_state():
    d = IdentityDictionary(2)
    gen = GeneratorOperator(L=np.zeros((2, 2)), half_step=np.eye(2), dtau=0.1, dict_id=d.dict_id)
    res = ResidualOperator(H=np.eye(2), dtau=0.1, dict_id=d.dict_id)
    np.testing.assert_array_equal(predict_composed(gen, res, d, [1.5, -2.0], k=1), [[1.5, -2.0]])


def test_residual_captures_an_unknown_constant_drift():
    A = np.array([[0.0, 1.0], [-1.0, -0.1]])
    c = np.array([0.5, -0.3])
    dtau = 0.1
    d = affine_dictionary(2)
    gen = fit_generator(CollocationSet.sample(_linear_field(A), [-1.0, -1.0], [1.0, 1.0], n=100, seed=5), d, dtau)
    rng = np.random.default_rng(6)
    truth = lambda x: A @ x + c
    ds = build_snapshots(_flow_trajectories(truth, rng.uniform(-1, 1, size=(4, 2)), dtau, 20))
    res = fit_residual(gen, ds, d)

    held_out = _flow_trajectories(truth, rng.uniform(-1, 1, size=(10, 2)), dtau, 1)
    x0 = np.array([t.robot[0] for t in held_out])
    x1 = np.array([t.robot[1] for t in held_out])
    composed = np.array([predict_composed(gen, res, d, x, k=1)[0] for x in x0])
    known = np.array([predict_known(gen, d, x, k=1)[0] for x in x0])
    err_composed = np.mean((composed - x1) ** 2)
    assert err_composed < 1e-12
    assert err_composed < np.mean((known - x1) ** 2)


def test_residual_learns_unmodelled_damping_on_a_pendulum():
    model = pendulum()
    damping = 0.5
    dtau = 0.05

    def known(x, u):
        return np.concatenate([x[1:], forward_dynamics(model, x[:1], x[1:], np.zeros(1))])

    def damped(q0, qd0, steps):
        traj = integrate_rk4(model, [q0], [qd0], lambda t, q, qd: -damping * qd, dtau / 10, steps * 10)
        return Trajectory(robot=traj.robot[::10], objects=None, inputs=None, dt=dtau)

    d = IdentityDictionary(2)
    gen = fit_generator(CollocationSet.sample(known, [-0.6, -2.0], [0.6, 2.0], n=300, seed=7), d, dtau)
    rng = np.random.default_rng(8)
    trajs = [damped(q0, qd0, 40) for q0, qd0 in zip(rng.uniform(-0.5, 0.5, 10), rng.uniform(-1, 1, 10))]
    res = fit_residual(gen, build_snapshots(trajs), d)

    truth = damped(0.4, 0.0, 20).robot[1:]
    err_composed = np.mean((predict_composed(gen, res, d, [0.4, 0.0], k=20) - truth) ** 2)
    err_known = np.mean((predict_known(gen, d, [0.4, 0.0], k=20) - truth) ** 2)
    assert err_composed < err_known


def test_residual_rejects_mismatched_sampling_interval(rng):
    d = IdentityDictionary(2)
    gen = GeneratorOperator(L=np.zeros((2, 2)), half_step=np.eye(2), dtau=0.1, dict_id=d.dict_id)
    ds = SnapshotDataset(X=rng.normal(size=(2, 5)), Xp=rng.normal(size=(2, 5)), U=np.zeros((0, 5)), dt=0.2)
    with pytest.raises(InvalidInputError):
        fit_residual(gen, ds, d)


def test_operators_round_trip(tmp_path):
    d = IdentityDictionary(3)
    gen = fit_generator(CollocationSet.sample(_linear_field(A3), -np.ones(3), np.ones(3), n=50, seed=0), d, 0.1)
    loaded = GeneratorOperator.load(gen.save(tmp_path / "gen.npz"))
    np.testing.assert_array_equal(loaded.half_step, gen.half_step)
    assert loaded.dict_id == gen.dict_id and loaded.n_inputs == 0
    res = ResidualOperator(H=np.eye(3), dtau=0.1, dict_id=d.dict_id)
    assert ResidualOperator.load(res.save(tmp_path / "res.npz")).dict_id == d.dict_id
