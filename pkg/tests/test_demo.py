import numpy as np
import pytest

from courteous.costs import AgentModel, CostWeights
from courteous.demo import (DEMONSTRATOR, INTERACTING, Demonstration, cost_hessian,
                            demo_problem, demo_terms, free_controls)
from courteous.dynamics import VehicleParams

LANE = ((-40.0, 0.0), (40.0, 0.0))


def make(L=5, extra=1, u=None):
    models = tuple(AgentModel(VehicleParams(), 0.6, LANE, 0.37, CostWeights(1, 1, 0.1, 1, 1))
                   for _ in range(2 + extra))
    x0 = np.array([[0.3, 0.37, 0.0, 0.6], [0.0, 0.0, 0.0, 0.6]] + [[2.0, 0.0, 0.0, 0.5]] * extra)
    u = np.tile([0.1, -0.05], (L, 1)) if u is None else u
    return Demonstration(u, np.zeros((L, 2)), x0, models, 0.1,
                         surrounding=np.full((extra, L, 2), [0.05, 0.0]))


def test_roles():
    assert DEMONSTRATOR == 0 and INTERACTING == 1


def test_too_short_rejected():
    with pytest.raises(ValueError):
        make(L=1)


def test_controls_stack_and_replace():
    d = make()
    U = d.controls()
    assert U.shape == (3, 5, 2)
    assert np.array_equal(U[0], d.human_controls)
    other = np.zeros((5, 2))
    assert np.array_equal(d.controls(other)[0], other)
    assert np.array_equal(d.controls(other)[2], d.surrounding[0])


def test_rollout_positions():
    d = make()
    X = d.rollout()
    assert X.shape == (6, 3, 4)
    assert np.array_equal(X[0], d.x0)
    assert np.array_equal(d.positions(), X[1:, 0, :2])
    d.states = X
    assert np.array_equal(d.positions(), X[1:, 0, :2])


def test_free_controls_exclude_saturated():
    u = np.tile([0.1, 0.0], (4, 1))
    u[1, 0] = 0.5  # at a_max
    u[2, 1] = -0.6  # at -steer_max
    mask = free_controls(make(L=4, u=u))
    assert mask.tolist() == [True, True, False, True, True, False, True, True]


def test_courtesy_term_needs_alternative():
    d = make()
    with pytest.raises(ValueError):
        demo_terms(d, CostWeights(lambda_c=1.0))
    assert len(demo_terms(d, CostWeights(lambda_c=1.0), alt=3.0)) == 2
    assert len(demo_terms(d, CostWeights())) == 1


def test_cost_hessian_symmetric():
    d = make()
    prob = demo_problem(d, demo_terms(d, CostWeights(1, 2, 0.3, 1, 3, lambda_c=5.0), alt=0.0))
    idx = np.arange(10)
    H = cost_hessian(prob, d.human_controls.ravel(), idx)
    assert np.array_equal(H, H.T)
    # the last throttle moves only the final speed and jerk:
    # d2/da2 of theta_acc ((a - a_prev)/dt)^2 + theta_d (v + a dt - v_d)^2
    assert H[8, 8] == pytest.approx(2 * 0.3 / 0.01 + 2 * 2.0 * 0.01, rel=1e-5)
