import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from courteous.costs import CostWeights
from courteous.data import SYNTHETIC_THETA, SyntheticSpec, generate_synthetic_demos
from courteous.demo import plan_demo
from courteous.irl import (PARAMS, DemoStats, IrlConfig, IrlError, NotPositiveDefinite,
                           demo_log_likelihood, evaluate, fit, following_gap, load_weights,
                           log_likelihood, precompute, save_weights, theta_vector,
                           total_log_likelihood, training_loss)

SHORT = SyntheticSpec(length=12)


@pytest.fixture(scope="module")
def clean_demos():
    demos, failures = generate_synthetic_demos(SYNTHETIC_THETA, SYNTHETIC_THETA.lambda_c, 3,
                                               seed=11, spec=SHORT)
    assert failures == 0
    return demos


@pytest.fixture(scope="module")
def noisy_demos():
    demos, _ = generate_synthetic_demos(SYNTHETIC_THETA, SYNTHETIC_THETA.lambda_c, 8, seed=3,
                                        spec=replace(SHORT, temperature=1.0))
    return demos


def test_config_validation():
    with pytest.raises(IrlError):
        IrlConfig(hessian_jitter=0.0)
    with pytest.raises(IrlError):
        IrlConfig(likelihood="exact")
    with pytest.raises(IrlError):
        IrlConfig(anchor="lambda_c")
    assert IrlConfig(courtesy_mode="collaborative").courtesy_mode.value == "collaborative"


@pytest.mark.parametrize("likelihood", ["laplace", "literal"])
def test_zero_weights_give_jitter_gaussian(clean_demos, likelihood):
    cfg = IrlConfig(use_courtesy_feature=False, likelihood=likelihood)
    stats = precompute(clean_demos[0], cfg)
    dim = stats.dim
    assert dim > 0
    lp = log_likelihood(np.zeros(5), stats, cfg)
    eps = cfg.hessian_jitter
    assert lp == pytest.approx(0.5 * dim * math.log(eps) - 0.5 * dim * math.log(2 * math.pi),
                               rel=1e-12)


def test_comfort_only_cost_matches_closed_form_gaussian(clean_demos):
    """Jerk plus steering-rate costs are exact quadratics in the controls."""
    demo = clean_demos[0]
    cfg = IrlConfig(use_courtesy_feature=False)
    w_acc, w_steer = 0.3, 0.05
    theta = CostWeights(theta_g=0.0, theta_acc=w_acc, theta_steer=w_steer)
    stats = precompute(demo, cfg)
    assert stats.free.all()  # every control strictly inside its limits

    # oracle: C = sum_k w_c ((u_k - u_{k-1}) / dt)^2 per channel, u_{-1} = prev
    L, dt = demo.length, demo.dt
    u = demo.human_controls
    D = (np.eye(L) - np.eye(L, k=-1)) / dt
    H = np.zeros((2 * L, 2 * L))
    g = np.zeros(2 * L)
    for c, w in ((0, w_acc), (1, w_steer)):
        r = D @ u[:, c]
        r[0] -= demo.prev[0, c] / dt
        H[c::2, c::2] = 2 * w * D.T @ D
        g[c::2] = 2 * w * D.T @ r
    eps = cfg.hessian_jitter * (1 + abs(np.trace(H)) / (2 * L))
    A = H + eps * np.eye(2 * L)
    _, logdet = np.linalg.slogdet(A)
    expected = -0.5 * g @ np.linalg.solve(A, g) + 0.5 * logdet - L * math.log(2 * math.pi)
    assert log_likelihood(theta_vector(theta, 5), stats, cfg) == pytest.approx(expected, abs=1e-4)


def test_theta_gradient_matches_finite_differences(noisy_demos):
    cfg = IrlConfig()
    rng = np.random.default_rng(0)
    stats = [precompute(d, cfg) for d in noisy_demos[:3]]
    checked = 0
    for _ in range(20):
        th = theta_vector(SYNTHETIC_THETA) * rng.uniform(0.5, 1.5, 6)
        try:
            _, grad, bad = total_log_likelihood(th, stats, cfg, with_grad=True)
        except NotPositiveDefinite:
            continue
        if bad:
            continue
        fd = np.zeros(6)
        for j in range(6):
            h = 1e-6 * max(1.0, th[j])
            tp, tm = th.copy(), th.copy()
            tp[j] += h
            tm[j] -= h
            fd[j] = (total_log_likelihood(tp, stats, cfg)[0]
                     - total_log_likelihood(tm, stats, cfg)[0]) / (2 * h)
        assert np.allclose(grad, fd, rtol=1e-3, atol=1e-3 * np.abs(fd).max())
        checked += 1
    assert checked >= 10


def test_optimal_demo_gradient_is_normalizer_only(clean_demos):
    """At the generating weights the data-fit part of the gradient vanishes;
    what remains is the gradient of the log-determinant alone."""
    # the demos are optima of the exact goal distance; keep the smoothed one
    # close to it so its gradient at the optimum stays negligible
    cfg = IrlConfig(goal_smoothing=1e-4)
    th = theta_vector(SYNTHETIC_THETA)
    for demo in clean_demos:
        stats = precompute(demo, cfg)
        g = th @ stats.grads
        assert np.linalg.norm(g) < 1e-2 * np.abs(th[:, None] * stats.grads).sum(axis=0).max()
        _, grad = log_likelihood(th, stats, cfg, with_grad=True)

        def half_logdet(t):
            H = np.tensordot(t, stats.hessians, axes=1)
            eps = cfg.hessian_jitter * (1 + abs(np.trace(H)) / stats.dim)
            return 0.5 * np.linalg.slogdet(H + eps * np.eye(stats.dim))[1]

        normalizer = np.zeros(6)
        for j in range(6):
            h = 1e-5 * max(1.0, th[j])
            tp, tm = th.copy(), th.copy()
            tp[j] += h
            tm[j] -= h
            normalizer[j] = (half_logdet(tp) - half_logdet(tm)) / (2 * h)
        assert np.linalg.norm(grad - normalizer) < 1e-2 * np.linalg.norm(grad)


def test_hessians_symmetric_and_positive_definite(noisy_demos):
    cfg = IrlConfig()
    th = theta_vector(SYNTHETIC_THETA)
    for demo in noisy_demos:
        stats = precompute(demo, cfg)
        for Hj in stats.hessians:
            assert np.abs(Hj - Hj.T).max() < 1e-6
        H = np.tensordot(th, stats.hessians, axes=1)
        eps = cfg.hessian_jitter * (1 + abs(np.trace(H)) / stats.dim)
        np.linalg.cholesky(H + eps * np.eye(stats.dim))


def test_indefinite_hessian_rejected():
    stats = DemoStats(np.zeros(5), np.zeros((5, 2)), np.tile(-np.eye(2), (5, 1, 1)), None,
                      np.ones(2, dtype=bool))
    cfg = IrlConfig(use_courtesy_feature=False)
    with pytest.raises(NotPositiveDefinite):
        log_likelihood(np.ones(5), stats, cfg)
    total, bad = total_log_likelihood(np.ones(5), [stats, stats], cfg)
    assert bad == [0, 1] and total == 0.0
    with pytest.raises(IrlError, match="no usable"):
        fit([], cfg, stats=[stats])


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 100.0), st.sampled_from(["laplace", "literal"]))
def test_likelihood_decreases_as_linear_term_grows(delta, likelihood):
    rng = np.random.default_rng(1)
    B = rng.normal(size=(4, 4))
    hess = np.stack([B @ B.T + np.eye(4)] * 5)
    grads = rng.normal(size=(5, 4))
    base = DemoStats(np.ones(5), grads, hess, None, np.ones(4, dtype=bool))
    cfg = IrlConfig(use_courtesy_feature=False, likelihood=likelihood)
    th = np.ones(5)
    if likelihood == "literal":
        worse = replace(base, phi=base.phi + delta)
    else:  # a larger gradient means a larger cost above the local minimum
        worse = replace(base, grads=base.grads * (1 + delta))
    assert log_likelihood(th, worse, cfg) < log_likelihood(th, base, cfg)


def test_demo_log_likelihood_wrapper(clean_demos):
    cfg = IrlConfig()
    th = SYNTHETIC_THETA
    direct = log_likelihood(theta_vector(th), precompute(clean_demos[1], cfg), cfg)
    assert demo_log_likelihood(th, clean_demos[1], cfg) == direct


def test_planner_invariant_to_global_scale(clean_demos):
    demo = clean_demos[2]
    th = CostWeights(theta_g=1.0, theta_d=10.0, theta_acc=0.0067, theta_steer=1.0, theta_s=1.33)
    a = plan_demo(demo, th)
    b = plan_demo(demo, th.scaled(7.5))
    assert np.abs(a - b).max() < 1e-3


def test_fit_returns_anchored_weights(noisy_demos):
    cfg = IrlConfig()
    result = fit(noisy_demos, cfg)
    w, curve = result
    assert w.theta_g == 1.0
    assert all(getattr(w, p) >= 0 for p in PARAMS)
    assert result.used + result.skipped == len(noisy_demos)
    assert curve[-1] <= curve[0]
    assert len(curve) >= 2
    loss = training_loss(result, [precompute(d, cfg) for d in noisy_demos], cfg)
    assert loss == pytest.approx(min(curve), rel=1e-6, abs=1e-6)


def test_fit_hold_anchor_keeps_scale(noisy_demos):
    cfg = IrlConfig(hold_anchor=True, init=CostWeights(theta_g=2.0, theta_d=2.0, theta_acc=2.0,
                                                        theta_steer=2.0, theta_s=2.0,
                                                        lambda_c=2.0))
    result = fit(noisy_demos[:4], cfg)
    assert result.scale == 2.0


def test_fit_stops_early_without_progress(noisy_demos):
    cfg = IrlConfig(patience=1)
    result = fit(noisy_demos[:3], cfg)
    assert result.early_stopped or result.epochs < cfg.max_epochs


def test_self_evaluation_is_near_zero(clean_demos):
    cfg = IrlConfig()
    res = evaluate(SYNTHETIC_THETA, clean_demos, cfg)
    assert res.failed == 0
    assert res.mean_med < 1e-3
    for gp, gd in res.gaps:
        assert np.abs(gp - gd).max() < 1e-2


def test_generator_wins_ab_comparison(clean_demos):
    cfg = IrlConfig()
    other = CostWeights(theta_g=1.0, theta_d=1.0, theta_acc=1.0, theta_steer=1.0, theta_s=1.0)
    assert evaluate(SYNTHETIC_THETA, clean_demos, cfg).mean_med < \
        evaluate(other, clean_demos, cfg).mean_med


def test_identical_trajectories_give_identical_gaps(clean_demos):
    demo = clean_demos[0]
    states = demo.rollout()
    assert np.array_equal(following_gap(states, demo), following_gap(demo.states, demo))


def test_weights_file_round_trip(tmp_path):
    p = tmp_path / "w.json"
    save_weights(SYNTHETIC_THETA, p)
    assert load_weights(p) == SYNTHETIC_THETA
    p.write_text('{"theta_g": "x"}')
    with pytest.raises(IrlError):
        load_weights(p)
