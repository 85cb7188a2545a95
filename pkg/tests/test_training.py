import dataclasses

import numpy as np
import pytest

from dk_rrt.checkpoint import load_checkpoint, save_checkpoint
from dk_rrt.errors import (DimensionMismatchError, HorizonExceededError, InvalidInputError,
                           TrainingDivergedError)
from dk_rrt.koopman.core import LiftedOperator, prediction_loss
from dk_rrt.koopman.encoder import MlpEncoder, encoder_config
from dk_rrt.koopman.observables import IdentityDictionary
from dk_rrt.koopman.serialization import save_container
from dk_rrt.sim.debris import Circular, DebrisField, Obstacle
from dk_rrt.sim.manipulator import planar_two_link
from dk_rrt.sim.render import ObservationSpec
from dk_rrt.sim.scene import load_scene
from dk_rrt.training import deep_training
from dk_rrt.training.deep_training import (LOSS_COLUMNS, ObservationDataset, ObservationTrajectory,
                                           OracleEncoder, TrainingConfig, composite_dictionary,
                                           encoder_gradient, feature_trajectories, initial_encoder,
                                           mean_rollout_loss, refit_operator, robot_dictionary,
                                           rollout_loss, simulate_observation_dataset, train,
                                           write_loss_csv)

CFG = TrainingConfig(n_trajectories=2, steps=30, n_step=3, hidden=(8,), n_epoch=4, refit_period=2,
                     batch=2, learning_rate=1e-3, seed=0)


@pytest.fixture(scope="module")
def dataset():
    debris = DebrisField([Obstacle(0.3, Circular(center=(0.0, 0.0, 0.0), radius=1.5, rate=0.5))])
    spec = ObservationSpec(grid=(8, 8), extent=4.0, noise_sigma=0.01, seed=0)
    return simulate_observation_dataset(planar_two_link(), debris, spec, CFG)


@pytest.fixture
def encoder(dataset):
    return initial_encoder(dataset, 2, CFG)


def _oracle_setup(dataset):
    oracle = OracleEncoder(2)
    d = composite_dictionary(IdentityDictionary(4), oracle)
    return oracle, d, refit_operator(dataset, oracle, d)


def test_simulated_dataset_shapes(dataset):
    assert len(dataset) == 2
    tr = dataset.trajectories[0]
    assert tr.length == 31 and tr.n_robot == 4 and tr.observation_dim == 64
    assert tr.objects.shape == (31, 2)
    assert len(dataset.windows(3)) == 2 * 28


def test_training_data_need_an_obstacle():
    with pytest.raises(InvalidInputError):
        simulate_observation_dataset(planar_two_link(), DebrisField(), ObservationSpec(grid=(4, 4)), CFG)


def test_oracle_one_step_loss_vanishes_on_linear_data(dataset):
    oracle, d, op = _oracle_setup(dataset)
    for tau0 in (0, 10, 25):
        assert rollout_loss(op, d, oracle, dataset.trajectories[1], tau0, 1) < 1e-16


def test_fixed_point_has_zero_loss():
    robot = np.tile([0.3, -0.2, 0.0, 0.0], (6, 1))
    traj = ObservationTrajectory(robot=robot, observations=np.zeros((6, 4)), objects=np.tile([1.0, 2.0], (6, 1)))
    oracle = OracleEncoder(2)
    d = composite_dictionary(IdentityDictionary(4), oracle)
    op = LiftedOperator(Gamma=np.eye(6), Delta=np.zeros((6, 0)), Pi=np.eye(6), dict_id=d.dict_id, dt=0.05)
    assert rollout_loss(op, d, oracle, traj, 0, 5) == 0.0


def test_window_past_the_end_is_rejected(dataset, encoder):
    d = composite_dictionary(IdentityDictionary(4), encoder)
    op = refit_operator(dataset, encoder, d)
    tr = dataset.trajectories[0]
    with pytest.raises(HorizonExceededError):
        rollout_loss(op, d, encoder, tr, tr.length - 1, 1)
    with pytest.raises(HorizonExceededError):
        encoder_gradient(op, d, encoder, tr, tr.length - 3, 3)


def test_untrained_encoder_is_worse_than_the_oracle(dataset, encoder):
    oracle, d_oracle, op_oracle = _oracle_setup(dataset)
    d = composite_dictionary(IdentityDictionary(4), encoder)
    op = refit_operator(dataset, encoder, d)
    assert mean_rollout_loss(op, d, encoder, dataset, 3) > mean_rollout_loss(op_oracle, d_oracle, oracle, dataset, 3)


def test_oracle_lower_bounds_the_fit_residual(dataset):
    _, _, op_oracle = _oracle_setup(dataset)
    for seed in range(5):
        enc = MlpEncoder(encoder_config(64, 2, hidden=(8,), seed=seed))
        d = composite_dictionary(IdentityDictionary(4), enc)
        assert op_oracle.residual <= refit_operator(dataset, enc, d).residual


def test_refit_with_an_unchanged_encoder_is_reproducible(dataset, encoder):
    d = composite_dictionary(IdentityDictionary(4), encoder)
    a = refit_operator(dataset, encoder, d)
    b = refit_operator(dataset, encoder, d)
    np.testing.assert_array_equal(a.Gamma, b.Gamma)


def test_two_sample_dataset_is_rank_deficient():
    traj = ObservationTrajectory(robot=np.array([[0.0, 0.1, 0.0, 0.0], [0.1, 0.2, 0.0, 0.0]]),
                                 observations=np.zeros((2, 4)), objects=np.array([[1.0, 0.0], [0.9, 0.1]]))
    oracle = OracleEncoder(2)
    op = refit_operator(ObservationDataset((traj,)), oracle, composite_dictionary(IdentityDictionary(4), oracle))
    assert op.rank_deficient


def test_encoder_gradient_matches_finite_differences(dataset, encoder):
    d = composite_dictionary(IdentityDictionary(4), encoder)
    op = refit_operator(dataset, encoder, d)
    tr = dataset.trajectories[0]
    loss, grads = encoder_gradient(op, d, encoder, tr, 5, 3)
    assert loss == pytest.approx(rollout_loss(op, d, encoder, tr, 5, 3), rel=1e-12)

    rng = np.random.default_rng(1)
    direction = [(rng.normal(size=W.shape), rng.normal(size=b.shape)) for W, b in encoder.params()]
    analytic = sum(float(np.sum(gW * dW) + np.sum(gb * db)) for (gW, gb), (dW, db) in zip(grads, direction))
    h = 1e-6
    probe = encoder.copy()
    probe.set_params([(W + h * dW, b + h * db) for (W, b), (dW, db) in zip(encoder.params(), direction)])
    up = rollout_loss(op, d, probe, tr, 5, 3)
    probe.set_params([(W - h * dW, b - h * db) for (W, b), (dW, db) in zip(encoder.params(), direction)])
    down = rollout_loss(op, d, probe, tr, 5, 3)
    assert (up - down) / (2 * h) == pytest.approx(analytic, rel=1e-4, abs=1e-9)


def test_zero_epochs_returns_the_initial_fit(dataset, encoder):
    result = train(dataset, CFG.model_copy(update={"n_epoch": 0}), IdentityDictionary(4), encoder)
    assert result.history == []
    assert result.operator.version == 1
    for (W, b), (W0, b0) in zip(result.encoder.params(), encoder.params()):
        np.testing.assert_array_equal(W, W0)
        np.testing.assert_array_equal(b, b0)


def test_training_history_and_versions(dataset, encoder):
    before = encoder.params()
    result = train(dataset, CFG, IdentityDictionary(4), encoder)
    assert [r.epoch for r in result.history] == [0, 1, 2, 3]
    assert [r.version for r in result.history] == [1, 2, 2, 3]
    assert result.operator.version == 3
    assert np.all(np.isfinite(result.losses))
    np.testing.assert_array_equal(encoder.params()[0][0], before[0][0])


def test_training_is_deterministic(dataset, encoder):
    a = train(dataset, CFG, IdentityDictionary(4), encoder)
    b = train(dataset, CFG, IdentityDictionary(4), encoder)
    np.testing.assert_array_equal(a.losses, b.losses)
    np.testing.assert_array_equal(a.operator.Gamma, b.operator.Gamma)


def test_non_finite_loss_stops_training(dataset, encoder, monkeypatch):
    def diverged(op, dictionary, enc, traj, tau0, n_step):
        return float("inf"), [(np.zeros_like(W), np.zeros_like(b)) for W, b in enc.params()]

    monkeypatch.setattr(deep_training, "encoder_gradient", diverged)
    with pytest.raises(TrainingDivergedError) as info:
        train(dataset, CFG, IdentityDictionary(4), encoder)
    assert info.value.epoch == 0


def test_horizon_longer_than_every_trajectory(dataset, encoder):
    with pytest.raises(HorizonExceededError):
        train(dataset, CFG.model_copy(update={"n_step": 40}), IdentityDictionary(4), encoder)


def test_dataset_validation():
    a = ObservationTrajectory(robot=np.zeros((3, 2)), observations=np.zeros((3, 4)))
    b = ObservationTrajectory(robot=np.zeros((3, 2)), observations=np.zeros((3, 5)))
    with pytest.raises(DimensionMismatchError):
        ObservationDataset((a, b))
    with pytest.raises(DimensionMismatchError):
        ObservationTrajectory(robot=np.zeros((3, 2)), observations=np.zeros((2, 4)))
    with pytest.raises(ValueError, match="Unknown robot dictionary"):
        robot_dictionary("quadratic", 2)


def test_loss_csv_header_and_deterministic_timing(dataset, encoder, tmp_path):
    result = train(dataset, CFG, IdentityDictionary(4), encoder)
    path = write_loss_csv(result.history, tmp_path / "loss.csv", deterministic=True)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(LOSS_COLUMNS)
    assert len(lines) == 1 + CFG.n_epoch
    assert all(line.endswith(",0") for line in lines[1:])


def test_checkpoint_round_trip(dataset, encoder, tmp_path):
    result = train(dataset, CFG, IdentityDictionary(4), encoder)
    path = save_checkpoint(tmp_path / "ckpt.npz", result.encoder, result.operator, result.dictionary, CFG, seed=7)
    ckpt = load_checkpoint(path)
    assert ckpt.seed == 7 and ckpt.config == CFG
    assert ckpt.dictionary.dict_id == result.dictionary.dict_id
    np.testing.assert_array_equal(ckpt.operator.Gamma, result.operator.Gamma)
    assert ckpt.operator.version == result.operator.version
    obs = dataset.trajectories[0].observations[:3]
    np.testing.assert_array_equal(ckpt.encoder.encode(obs), result.encoder.encode(obs))


def test_checkpoint_rejects_mismatched_parts(dataset, encoder, tmp_path):
    d = composite_dictionary(IdentityDictionary(4), encoder)
    op = refit_operator(dataset, encoder, d)
    with pytest.raises(InvalidInputError):
        save_checkpoint(tmp_path / "bad.npz", encoder, op, IdentityDictionary(6))
    other = save_container(tmp_path / "other.npz", "lifted_operator", {}, {"Gamma": np.eye(2)})
    with pytest.raises(InvalidInputError, match="expected kind"):
        load_checkpoint(other)


def test_refit_never_raises_the_one_step_loss(dataset, encoder):
    d = composite_dictionary(IdentityDictionary(4), encoder)
    stale = refit_operator(dataset, encoder, d, version=1)
    rng = np.random.default_rng(3)
    moved = encoder.copy()
    moved.set_params([(W + 0.1 * rng.normal(size=W.shape), b + 0.1 * rng.normal(size=b.shape))
                      for W, b in encoder.params()])
    trajs = feature_trajectories(dataset, moved)
    before = prediction_loss(stale, d, trajs)
    fresh = refit_operator(dataset, moved, d, version=2)
    after = prediction_loss(fresh, d, trajs)
    assert after <= before * (1 + 1e-12)
    assert after == pytest.approx(fresh.residual ** 2, rel=1e-8, abs=1e-14)


def test_refit_gamma_is_a_least_squares_minimum(dataset, encoder):
    d = composite_dictionary(IdentityDictionary(4), encoder)
    op = refit_operator(dataset, encoder, d)
    trajs = feature_trajectories(dataset, encoder)
    base = prediction_loss(op, d, trajs)
    rng = np.random.default_rng(5)
    for _ in range(20):
        bump = rng.normal(size=op.Gamma.shape)
        bump *= 1e-3 / np.linalg.norm(bump)
        assert prediction_loss(dataclasses.replace(op, Gamma=op.Gamma + bump), d, trajs) >= base


def test_small_step_against_the_gradient_never_raises_the_loss(dataset):
    for seed in range(20):
        enc = MlpEncoder(encoder_config(64, 2, hidden=(8,), seed=seed))
        d = composite_dictionary(IdentityDictionary(4), enc)
        op = refit_operator(dataset, enc, d)
        tr = dataset.trajectories[seed % 2]
        loss, grads = encoder_gradient(op, d, enc, tr, seed, 3)
        norm = np.sqrt(sum(float(np.sum(gW ** 2) + np.sum(gb ** 2)) for gW, gb in grads))
        if norm == 0.0:
            continue
        stepped = enc.copy()
        stepped.sgd_step(grads, 1e-6 / norm)
        assert rollout_loss(op, d, stepped, tr, seed, 3) <= loss + 1e-12 * max(1.0, loss)


def test_refit_period_beyond_the_epochs_fits_once(dataset, encoder, monkeypatch):
    calls = []
    fit = deep_training.refit_operator

    def counting(*args, **kwargs):
        calls.append(kwargs.get("version"))
        return fit(*args, **kwargs)

    monkeypatch.setattr(deep_training, "refit_operator", counting)
    cfg = CFG.model_copy(update={"refit_period": CFG.n_epoch + 1})
    result = train(dataset, cfg, IdentityDictionary(4), encoder)
    assert calls == [1]
    assert result.operator.version == 1
    assert [r.version for r in result.history] == [1] * cfg.n_epoch


@pytest.mark.slow
def test_two_obstacle_training_halves_the_loss(scenes_dir):
    scene = load_scene(scenes_dir / "two_obstacle.yaml")
    cfg = scene.training
    ds = simulate_observation_dataset(scene.build_model(), scene.build_field(), scene.observation_spec(cfg.seed), cfg)
    enc = initial_encoder(ds, 4, cfg)
    result = train(ds, cfg, robot_dictionary(cfg.robot_dictionary, 4), enc)
    losses = result.losses
    assert np.mean(losses[-10:]) <= 0.5 * np.mean(losses[:10])
