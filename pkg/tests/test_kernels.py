"""Compiled kernel vs numpy fallback vs the loop oracle."""
import numpy as np
import pytest

from courteous import _kernel_py, kernel
from courteous.costs import build_problem, cost_term
from conftest import oracle_features, two_lane_world

compiled = pytest.importorskip("courteous._kernel")

BACKENDS = [compiled.Problem, _kernel_py.Problem]


def random_case(rng, M=3, N=6):
    world = two_lane_world(M - 2)
    x0 = np.column_stack([rng.uniform(-1, 1, M), rng.uniform(-0.4, 0.4, M),
                          rng.uniform(-0.5, 0.5, M), rng.uniform(0, 1, M)])
    U = rng.uniform(-1.5, 1.0, (M, N, 2))
    return world, x0, U


def test_selected_backend_is_compiled():
    assert kernel.BACKEND == "cython"


@pytest.mark.parametrize("seed", range(10))
def test_backends_agree_with_oracle(seed):
    rng = np.random.default_rng(seed)
    world, x0, U = random_case(rng)
    prev = rng.uniform(-0.5, 0.5, 2)
    term = cost_term(world, 1, world.agents[1].weights, prev)
    ref = oracle_features(world, x0, U, 1, prev, term.mask)
    for cls in BACKENDS:
        prob = build_problem(world, x0, U, [], [term], backend=cls)
        X, F, totals = prob.evaluate(np.zeros(0))
        assert np.allclose(F[0], ref, rtol=1e-12, atol=1e-12)
        assert totals[0] == pytest.approx(world.agents[1].weights.vector() @ ref, rel=1e-12)


@pytest.mark.parametrize("temp", [0.0, 0.5])
def test_batched_values_and_gradients_agree(temp):
    rng = np.random.default_rng(7)
    world, x0, U = random_case(rng, M=4, N=5)
    terms = [cost_term(world, 0, world.agents[0].weights, [0.1, 0.0]),
             cost_term(world, 1, world.agents[1].weights, [0.0, 0.0], scale=30.0,
                       offset=20.0, hinge=True)]
    probs = [build_problem(world, x0, U, [0, 1], terms, temp, backend=cls) for cls in BACKENDS]
    Z = rng.uniform(-1, 0.5, (8, probs[0].size))
    v_c, v_p = (p.values(Z) for p in probs)
    assert np.allclose(v_c, v_p, rtol=1e-11, atol=1e-11)
    for z in Z[:3]:
        assert probs[0].value(z) == pytest.approx(probs[1].value(z), rel=1e-11)
        assert np.allclose(probs[0].fd_grad(z, 1e-5), probs[1].fd_grad(z, 1e-5),
                           rtol=1e-5, atol=1e-6)


def test_hinge_clips_at_zero():
    rng = np.random.default_rng(1)
    world, x0, U = random_case(rng)
    raw = build_problem(world, x0, U, [], [cost_term(world, 1, world.agents[1].weights)])
    total = raw.value(np.zeros(0))
    for cls in BACKENDS:
        above = build_problem(world, x0, U, [], [cost_term(
            world, 1, world.agents[1].weights, offset=total + 5.0, hinge=True)], backend=cls)
        below = build_problem(world, x0, U, [], [cost_term(
            world, 1, world.agents[1].weights, offset=total - 5.0, hinge=True)], backend=cls)
        assert above.value(np.zeros(0)) == 0.0
        assert below.value(np.zeros(0)) == pytest.approx(5.0)


def test_decision_agents_override_base_controls():
    rng = np.random.default_rng(2)
    world, x0, U = random_case(rng)
    term = cost_term(world, 1, world.agents[1].weights)
    z = rng.uniform(-1, 0.5, U.shape[1] * 2)
    U2 = U.copy()
    U2[1] = z.reshape(-1, 2)
    for cls in BACKENDS:
        a = build_problem(world, x0, U, [1], [term], backend=cls).value(z)
        b = build_problem(world, x0, U2, [], [term], backend=cls).value(np.zeros(0))
        assert a == b


@pytest.mark.parametrize("temp", [0.0, 0.5])
@pytest.mark.parametrize("seed", range(4))
def test_adjoint_gradient_matches_central_differences(seed, temp):
    rng = np.random.default_rng(100 + seed)
    world, x0, U = random_case(rng, M=3, N=6)
    x0[:, 3] = rng.uniform(0.2, 0.8, 3)  # keep speed away from its clamp
    terms = [cost_term(world, 0, world.agents[0].weights, [0.1, 0.0]),
             cost_term(world, 1, world.agents[1].weights, [0.0, 0.1], scale=3.0,
                       offset=1.0, hinge=True)]
    z = rng.uniform(-0.4, 0.2, 2 * U.shape[1] * 2)
    for cls in BACKENDS:
        prob = build_problem(world, x0, U, [0, 1], terms, temp, backend=cls)
        val, g = prob.value_and_grad(z)
        assert val == pytest.approx(prob.value(z), rel=1e-12)
        fd = prob.fd_grad(z, 1e-6)
        assert np.allclose(g, fd, rtol=1e-5, atol=1e-5 * max(1.0, np.abs(fd).max()))


def test_adjoint_zero_outside_control_bounds():
    rng = np.random.default_rng(3)
    world, x0, U = random_case(rng)
    term = cost_term(world, 0, world.agents[0].weights)
    z = np.tile([2.0, 0.0], U.shape[1])  # accel above its upper bound
    for cls in BACKENDS:
        _, g = build_problem(world, x0, U, [0], [term], backend=cls).value_and_grad(z)
        assert np.all(g[0::2] == 0.0)
