import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from courteous.dynamics import (AgentState, Control, ControlLimits, JointState, Trajectory,
                                VehicleParams, rollout, step, wrap_angle)
from courteous.scenarios import builtin_scenario

P = VehicleParams()


def fine_step(state, control, dt, params, substeps=100):
    """Continuous-time bicycle integrated with many small Euler steps."""
    u, _ = params.limits.clamp(control)
    x, y, h, v = state.x, state.y, state.heading, state.speed
    h_dt = dt / substeps
    for _ in range(substeps):
        x, y, h, v = (x + v * math.cos(h) * h_dt, y + v * math.sin(h) * h_dt,
                      h + v / params.wheelbase * math.tan(u.steer) * h_dt,
                      min(max(v + u.accel * h_dt, 0.0), params.limits.v_max))
    return AgentState(x, y, wrap_angle(h), v)


def test_zero_input_straight_line():
    nxt, sat = step(AgentState(0, 0, 0, 1.0), Control(0, 0), 0.1)
    assert (nxt.x, nxt.y, nxt.heading, nxt.speed) == pytest.approx((0.1, 0, 0, 1.0))
    assert not sat


def test_accel_clamped_then_speed_capped():
    nxt, sat = step(AgentState(0, 0, 0, 1.0), Control(0.9, 0), 0.1)
    assert sat
    assert nxt.speed == 1.0
    # the clamp to a_max = 0.5 is what is applied
    nxt2, _ = step(AgentState(0, 0, 0, 0.5), Control(0.9, 0), 0.1)
    assert nxt2.speed == pytest.approx(0.55)


def test_forward_euler_formula():
    s, u, dt = AgentState(0, 0, 0, 0.8), Control(0.5, 0.3), 0.1
    nxt, _ = step(s, u, dt, P)
    assert nxt.x == pytest.approx(0.8 * dt)
    assert nxt.y == pytest.approx(0.0)
    assert nxt.heading == pytest.approx(0.8 / 0.26 * math.tan(0.3) * dt)
    assert nxt.speed == pytest.approx(0.85)


def test_against_fine_integrator():
    # forward Euler carries O(dt^2) local error; with these inputs the
    # lateral drift of the fine integrator is about 3.9e-3 after one step
    s, u, dt = AgentState(0, 0, 0, 0.8), Control(0.5, 0.3), 0.1
    nxt, _ = step(s, u, dt, P)
    ref = fine_step(s, u, dt, P)
    bound = 0.5 * dt ** 2 * (0.8 / 0.26 * math.tan(0.3)) * 1.0 + 0.5 * dt ** 2 * 0.5 / 0.26
    for a, b in zip(nxt.as_array(), ref.as_array()):
        assert abs(a - b) < max(bound, 1e-3)


def test_rollout_empty_horizon():
    x0 = JointState(AgentState(0, 0, 0, 0.5), AgentState(1, 0, 0, 0.5))
    assert rollout(x0, np.zeros((0, 2)), np.zeros((0, 2)), 0.1) == [x0]


def test_rollout_constant_velocity():
    x0 = JointState(AgentState(0, 0.37, 0, 0.85), AgentState(0, 0, 0, 0.85))
    states = rollout(x0, np.zeros((5, 2)), np.zeros((5, 2)), 0.1)
    assert len(states) == 6
    for k, s in enumerate(states):
        assert s.robot.x == pytest.approx(0.085 * k)
        assert s.human.x == pytest.approx(0.085 * k)
        assert s.human.y == 0.0 and s.human.heading == 0.0


def test_rollout_replay_is_bit_identical():
    sc = builtin_scenario("lane_change_slow")
    rng = np.random.default_rng(3)
    uR, uH = rng.uniform(-1, 0.5, (20, 2)), rng.uniform(-1, 0.5, (20, 2))
    a = rollout(sc.initial_state(), uR, uH, sc.dt, sc.params())
    b = rollout(sc.initial_state(), uR, uH, sc.dt, sc.params())
    assert np.array_equal(np.array([s.as_array() for s in a]),
                          np.array([s.as_array() for s in b]))


controls = st.tuples(st.floats(-5, 5), st.floats(-2, 2))
states = st.builds(AgentState, st.floats(-10, 10), st.floats(-10, 10),
                   st.floats(-3.1, 3.1), st.floats(0, 1.0))


@given(states, controls)
def test_clamp_idempotence(s, u):
    c = Control(*u)
    clamped, _ = P.limits.clamp(c)
    assert step(s, clamped, 0.1)[0] == step(s, c, 0.1)[0]


@given(states, st.lists(controls, min_size=1, max_size=30))
def test_speed_stays_in_range(s, seq):
    traj = Trajectory.from_controls(s, seq, 0.1)
    assert np.all(traj.states[:, 3] >= 0.0)
    assert np.all(traj.states[:, 3] <= P.limits.v_max)
    assert np.all(traj.states[1:, 2] > -math.pi) and np.all(traj.states[1:, 2] <= math.pi)


@given(st.floats(0, 1), st.lists(st.floats(-3, 3), min_size=1, max_size=20))
def test_zero_steer_keeps_lane(v, accels):
    traj = Trajectory.from_controls(AgentState(0, 0.2, 0, v), [(a, 0) for a in accels], 0.1)
    assert np.all(traj.states[:, 1] == 0.2)
    assert np.all(traj.states[:, 2] == 0.0)


@settings(max_examples=25)
@given(st.lists(controls, min_size=1, max_size=15))
def test_trajectory_rollout_consistency(seq):
    traj = Trajectory.from_controls(AgentState(0, 0, 0.3, 0.5), seq, 0.1)
    assert traj.is_consistent()


def test_limits_defaults_match_scaled_world():
    lim = ControlLimits()
    assert (lim.a_min, lim.a_max, lim.v_max) == (-1.0, 0.5, 1.0)


def test_nonpositive_dt_rejected():
    with pytest.raises(ValueError):
        step(AgentState(0, 0, 0, 0), Control(), 0.0)
