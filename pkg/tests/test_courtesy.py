import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from courteous.courtesy import (CourtesyMode, PlannerSettings, alternative_cost,
                                alternative_costs, compound_cost, courtesy_term, plan_courteous,
                                plan_selfish, selfish_cost)
from courteous.response import Situation, human_best_response, human_cost
from courteous.scenarios import builtin_scenario
from conftest import two_lane_world
from toy import toy_instance

MODES = list(CourtesyMode)


def scenario_situation(name):
    sc = builtin_scenario(name)
    return Situation(sc.world(), sc.initial_state().as_array(), sc.horizon)


def lone_human(N=6):
    world = two_lane_world(0)
    x0 = np.array([[300.0, 0.37, 0.0, 1.0], [0.0, 0.0, 0.0, 1.0]])
    return Situation(world, x0, N)


def test_mode_parsing():
    assert CourtesyMode.parse("MaintainBehavior") is CourtesyMode.MAINTAIN
    assert CourtesyMode.parse("not-there") is CourtesyMode.NOT_THERE
    with pytest.raises(ValueError):
        CourtesyMode.parse("polite")


def test_isolated_human_same_alternative_in_every_mode():
    sit = lone_human(N=6)
    theta_g = sit.weights(1).theta_g
    for mode in MODES:
        assert alternative_cost(mode, sit, prev_uR=[0.0, 0.0]) == pytest.approx(6 * theta_g,
                                                                                   abs=1e-9)


@pytest.mark.parametrize("seed", range(6))
def test_alternative_ordering_on_toys(seed):
    sit = toy_instance(seed, N=3)
    alts = alternative_costs(sit, prev_uR=sit.prev[0])
    a, b, c = (alts[m] for m in (CourtesyMode.NOT_THERE, CourtesyMode.COLLABORATIVE,
                                 CourtesyMode.MAINTAIN))
    assert a <= b + 1e-3 and b <= c + 1e-3


def test_right_turn_maintain_alternative_is_costlier():
    sit = scenario_situation("right_turn_human")
    alts = alternative_costs(sit, prev_uR=[0.0, 0.0])
    nt, co, mb = (alts[m] for m in (CourtesyMode.NOT_THERE, CourtesyMode.COLLABORATIVE,
                                    CourtesyMode.MAINTAIN))
    assert mb > co and mb > nt
    # a collaborating robot gets out of the way: close to the unimpeded turn
    assert co - nt < (mb - nt) / 3


def test_hinge_at_and_below_alternative():
    sit = toy_instance(1, N=3)
    uR = np.zeros((3, 2))
    uH = human_best_response(sit, uR)
    c = human_cost(sit, uR, uH)
    assert courtesy_term(sit, uR, uH, c) == 0.0
    assert courtesy_term(sit, uR, uH, c + 5.0) == 0.0  # human better off: no bonus
    assert courtesy_term(sit, uR, uH, c - 5.0) == pytest.approx(5.0)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10_000), st.floats(-50, 500))
def test_hinge_nonnegative(seed, alt):
    rng = np.random.default_rng(seed)
    sit = toy_instance(seed % 50, N=3)
    uR, uH = rng.uniform(-1, 0.5, (2, 3, 2))
    val = courtesy_term(sit, uR, uH, alt)
    assert val >= 0.0
    assert val == max(0.0, human_cost(sit, uR, uH) - alt)


def test_zero_lambda_compound_is_selfish():
    sit = toy_instance(2, N=3)
    uR = np.full((3, 2), 0.1)
    uH = human_best_response(sit, uR)
    assert compound_cost(sit, uR, 0.0, 10.0) == selfish_cost(sit, uR, uH)


def test_far_robot_adds_no_courtesy():
    sit = lone_human()
    alt = alternative_cost(CourtesyMode.NOT_THERE, sit)
    uR = sit.zeros()
    uH = human_best_response(sit, uR)
    assert courtesy_term(sit, uR, uH, alt) == pytest.approx(0.0, abs=1e-9)
    assert compound_cost(sit, uR, 1e4, alt) == pytest.approx(selfish_cost(sit, uR, uH), abs=1e-4)


def test_negative_lambda_rejected():
    sit = toy_instance(0)
    with pytest.raises(ValueError):
        compound_cost(sit, sit.zeros(), -1.0, 0.0)
    with pytest.raises(ValueError):
        plan_courteous(sit, -1.0)


def test_learned_scale_courtesy_penalizes_cut_in():
    sit = scenario_situation("blocked_overtake")
    alt = alternative_cost(CourtesyMode.NOT_THERE, sit)
    N = sit.horizon
    cut_in = np.column_stack([np.full(N, 0.5), np.r_[np.full(4, 0.3), np.full(N - 4, -0.3)]])
    wait = np.column_stack([np.full(N, -0.5), np.zeros(N)])
    assert compound_cost(sit, cut_in, 9.89e4, alt) > compound_cost(sit, wait, 9.89e4, alt)


def test_zero_lambda_planner_is_selfish_planner():
    sit = scenario_situation("lane_change_slow")
    s = PlannerSettings()
    a = plan_courteous(sit, 0.0, settings=s)
    b = plan_selfish(sit, settings=s)
    assert np.array_equal(a.uR, b.uR)
    assert np.array_equal(a.uH_predicted, b.uH_predicted)


def test_result_invariants():
    sit = scenario_situation("lane_change_slow")
    res = plan_courteous(sit, 100.0, CourtesyMode.NOT_THERE)
    assert res.courtesy_value >= 0
    recomputed = max(0.0, human_cost(sit, res.uR, res.uH_predicted) - res.alt_cost)
    assert res.courtesy_value == recomputed
    assert res.compound_cost == pytest.approx(res.selfish_cost + 100.0 * res.courtesy_value)


def test_iterates_never_increase_compound_cost():
    sit = scenario_situation("lane_change_fast")
    alt = alternative_cost(CourtesyMode.NOT_THERE, sit)
    warm = np.tile([0.3, 0.2], (sit.horizon, 1))
    res = plan_courteous(sit, 1e3, alt_cost=alt, warm_uR=warm)
    uH0 = human_best_response(sit, warm)
    start = selfish_cost(sit, warm, uH0) + 1e3 * courtesy_term(sit, warm, uH0, alt)
    assert res.compound_cost <= start


def test_courtesy_softens_predicted_braking():
    sit = scenario_situation("lane_change_slow")
    selfish = plan_courteous(sit, 0.0)
    kind = plan_courteous(sit, 1e4)
    assert selfish.uH_predicted[:, 0].min() < -0.2
    assert kind.uH_predicted[:, 0].min() > selfish.uH_predicted[:, 0].min()
    assert kind.courtesy_value < selfish.courtesy_value
