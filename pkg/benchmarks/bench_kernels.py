"""Time the compiled objective kernel against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Reports per-call times for single evaluations, batched evaluations and the
adjoint gradient on a planning-sized problem, plus the speedup.
"""
import argparse
import timeit

import numpy as np

from courteous import _kernel_py
from courteous.costs import build_problem, cost_term
from courteous.scenarios import builtin_scenario

try:
    from courteous._kernel import Problem as CompiledProblem
except ImportError:
    CompiledProblem = None


def make_problems(horizon: int):
    sc = builtin_scenario("blocked_overtake_3agent")
    world = sc.world()
    x0 = sc.initial_state().as_array()
    rng = np.random.default_rng(0)
    U = rng.uniform(-0.3, 0.3, (len(world), horizon, 2))
    terms = [cost_term(world, 0, world.agents[0].weights, [0.0, 0.0]),
             cost_term(world, 1, world.agents[1].weights, [0.0, 0.0], scale=100.0,
                       offset=5.0, hinge=True)]
    backends = {"python": _kernel_py.Problem}
    if CompiledProblem is not None:
        backends["cython"] = CompiledProblem
    return {name: build_problem(world, x0, U, [0], terms, backend=cls)
            for name, cls in backends.items()}, rng


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--horizon", type=int, default=10)
    ap.add_argument("--batch", type=int, default=64)
    args = ap.parse_args(argv)

    probs, rng = make_problems(args.horizon)
    z = rng.uniform(-0.5, 0.3, probs["python"].size)
    Z = rng.uniform(-0.5, 0.3, (args.batch, probs["python"].size))
    cases = {
        "value": lambda p: p.value(z),
        f"values[{args.batch}]": lambda p: p.values(Z),
        "value_and_grad": lambda p: p.value_and_grad(z),
    }
    print(f"{'case':<16}" + "".join(f"{n:>14}" for n in probs) + f"{'speedup':>10}")
    for case, fn in cases.items():
        times = {}
        for name, p in probs.items():
            n = 200 if name == "cython" else 20
            times[name] = min(timeit.repeat(lambda: fn(p), number=n, repeat=args.repeat)) / n
        row = "".join(f"{times[n] * 1e6:>12.1f}us" for n in probs)
        speed = times["python"] / times["cython"] if "cython" in times else float("nan")
        print(f"{case:<16}{row}{speed:>9.1f}x")


if __name__ == "__main__":
    main()
