import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dk_rrt.errors import InvalidInputError
from dk_rrt.sim.debris import (Ballistic, Circular, DebrisField, Obstacle, Reversing, Sinusoidal,
                               debris_positions, debris_states)
from dk_rrt.sim.integrators import rk4_integrate
from dk_rrt.sim.render import ObservationSpec, observation_image, render_observation


def _field(*motions, radius=0.2):
    return DebrisField([Obstacle(radius, m) for m in motions])


def test_ballistic_is_a_straight_line():
    m = Ballistic(p0=(1.0, 2.0, 3.0), v0=(0.5, -1.0, 0.0))
    np.testing.assert_allclose(m.position(2.0), [2.0, 0.0, 3.0])
    np.testing.assert_allclose(m.acceleration(2.0), 0.0)


def test_circular_starts_at_phase_zero():
    m = Circular(center=(1.0, 1.0, 0.5), radius=2.0, rate=0.7)
    np.testing.assert_allclose(m.position(0.0), [3.0, 1.0, 0.5])


def test_sinusoid_repeats_after_one_period():
    m = Sinusoidal(center=(0.0, 1.0, 0.0), amplitude=(0.5, 0.2, 0.0), rate=1.3, phase=0.4)
    np.testing.assert_allclose(m.position(m.period), m.position(0.0), atol=1e-12)


def test_reversing_turns_around_continuously():
    m = Reversing(p0=(0.0, 0.0, 0.0), v0=(1.0, 0.0, 0.0), t_reverse=2.0)
    np.testing.assert_allclose(m.position(2.0 + 1e-9), m.position(2.0), atol=1e-8)
    np.testing.assert_allclose(m.position(4.0), [0.0, 0.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(m.velocity(3.0), [-1.0, 0.0, 0.0])


@pytest.mark.parametrize("motion", [
    Sinusoidal(center=(0.0, 0.0, 0.0), amplitude=(0.5, 0.3, 0.1), rate=2.0, phase=0.1),
    Circular(center=(0.5, 0.0, 0.0), radius=1.5, rate=-0.8, phase=1.0),
])
def test_derivatives_are_consistent(motion):
    t, h = 1.7, 1e-6
    np.testing.assert_allclose((motion.position(t + h) - motion.position(t - h)) / (2 * h),
                               motion.velocity(t), atol=1e-7)
    np.testing.assert_allclose((motion.velocity(t + h) - motion.velocity(t - h)) / (2 * h),
                               motion.acceleration(t), atol=1e-7)
    state = np.concatenate([motion.position(t), motion.velocity(t)])
    np.testing.assert_allclose(motion.ode(state)[3:], motion.acceleration(t), atol=1e-12)


@pytest.mark.parametrize("motion", [
    Ballistic(p0=(1.0, -2.0, 0.5), v0=(0.3, 0.4, -0.1)),
    Sinusoidal(center=(0.0, 1.0, 0.0), amplitude=(0.5, 0.3, 0.1), rate=2.0, phase=0.1),
    Circular(center=(0.5, 0.0, 0.2), radius=1.5, rate=-0.8, phase=1.0),
], ids=["ballistic", "sinusoidal", "circular"])
def test_integrated_ode_tracks_the_closed_form(motion):
    h, steps = 1e-3, 10_000
    field = DebrisField([Obstacle(0.2, motion)])
    y0 = np.concatenate([motion.position(0.0), motion.velocity(0.0)])
    states = rk4_integrate(lambda t, y: motion.ode(y), y0, 0.0, h, steps)
    for k in range(0, steps + 1, 500):
        (center, _), = debris_positions(field, k * h)
        np.testing.assert_allclose(states[k, :3], center, atol=1e-8)


def test_field_queries():
    field = _field(Ballistic((0.0, 0.0, 0.0), (1.0, 0.0, 0.0)), Circular((0.0, 0.0, 0.0), 1.0, 1.0), radius=0.3)
    assert len(field) == 2
    assert field.centers(1.0).shape == (2, 3)
    (c0, r0), _ = debris_positions(field, 1.0)
    np.testing.assert_allclose(c0, [1.0, 0.0, 0.0])
    assert r0 == 0.3
    states = debris_states(field, 1.0)
    assert states.shape == (12,)
    np.testing.assert_allclose(states[3:6], [1.0, 0.0, 0.0])
    with pytest.raises(InvalidInputError):
        field.centers(-0.1)
    assert debris_states(DebrisField(), 0.0).shape == (0,)


def test_obstacle_radius_must_be_positive():
    with pytest.raises(InvalidInputError):
        Obstacle(0.0, Ballistic((0.0, 0.0, 0.0), (0.0, 0.0, 0.0)))


def test_occupied_area_matches_disc_area():
    field = _field(Ballistic((0.0, 0.0, 0.0), (0.0, 0.0, 0.0)), radius=1.0)
    spec = ObservationSpec(grid=(32, 32), extent=4.0, noise_sigma=0.0)
    obs = render_observation(field, spec, 0.0)
    assert obs.shape == (1024,)
    cells_per_m2 = 1024 / 16.0
    assert int(np.sum(obs == 1.0)) == pytest.approx(np.pi * cells_per_m2, rel=0.1)


def test_noise_free_empty_field_is_blank():
    spec = ObservationSpec(grid=(8, 8), noise_sigma=0.0)
    np.testing.assert_array_equal(render_observation(DebrisField(), spec, 1.0), np.zeros(64))


def test_empty_field_is_pure_noise():
    spec = ObservationSpec(grid=(8, 8), noise_sigma=0.05, seed=3)
    covering = _field(Ballistic((0.0, 0.0, 0.0), (0.0, 0.0, 0.0)), radius=100.0)
    diff = render_observation(covering, spec, 0.5) - render_observation(DebrisField(), spec, 0.5)
    np.testing.assert_allclose(diff, 1.0, atol=1e-12)


@given(st.floats(0.0, 100.0, allow_nan=False), st.integers(0, 2 ** 16))
def test_rendering_is_deterministic(t, seed):
    field = _field(Circular((0.0, 0.0, 0.0), 1.0, 0.5))
    spec = ObservationSpec(grid=(8, 8), seed=seed)
    np.testing.assert_array_equal(render_observation(field, spec, t), render_observation(field, spec, t))


def test_noise_differs_between_seeds():
    field = DebrisField()
    a = render_observation(field, ObservationSpec(grid=(8, 8), seed=0), 0.0)
    b = render_observation(field, ObservationSpec(grid=(8, 8), seed=1), 0.0)
    assert not np.array_equal(a, b)


def test_projection_plane_selects_axes():
    field = _field(Ballistic((1.0, 5.0, 1.0), (0.0, 0.0, 0.0)), radius=0.3)
    xz = render_observation(field, ObservationSpec(grid=(16, 16), plane="xz", noise_sigma=0.0), 0.0)
    xy = render_observation(field, ObservationSpec(grid=(16, 16), plane="xy", noise_sigma=0.0), 0.0)
    assert xz.sum() > 0
    assert xy.sum() == 0
    with pytest.raises(InvalidInputError):
        ObservationSpec(plane="uv")


def test_observation_image_size():
    spec = ObservationSpec(grid=(8, 12), noise_sigma=0.0)
    img = observation_image(render_observation(DebrisField(), spec, 0.0), spec, markers=[(1, 2)], scale=4)
    assert img.size == (48, 32)
    assert img.mode == "RGB"
