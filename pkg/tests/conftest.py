import math
import time

import numpy as np
import pytest

from courteous.costs import AgentModel, CostWeights, World
from courteous.dynamics import AgentState, Control, VehicleParams, step


def oracle_features(world, x0, U, perspective, prev, mask):
    """Feature sums computed with plain Python loops over dynamics.step.

    Independent of the kernels: used to check them.
    """
    M, N = U.shape[:2]
    states = [[AgentState.from_array(x0[m])] for m in range(M)]
    clamped = np.zeros_like(U)
    for m in range(M):
        p = world.agents[m].vehicle
        for k in range(N):
            u, _ = p.limits.clamp(Control(*U[m, k]))
            clamped[m, k] = (u.accel, u.steer)
            states[m].append(step(states[m][-1], u, world.dt, p)[0])
    a = world.agents[perspective]
    f = np.zeros(5)
    ap, sp = prev
    for k in range(N):
        s = states[perspective][k + 1]
        acc, st = clamped[perspective, k]
        f[0] += (s.speed - a.v_d) ** 2
        f[1] += ((acc - ap) / world.dt) ** 2
        f[2] += ((st - sp) / world.dt) ** 2
        if a.target:
            f[3] += math.exp(_seg_dist(a.target, s.x, s.y) / a.lane_width)
        for j in range(M):
            if j == perspective or mask[j] == 0:
                continue
            o = states[j][k + 1]
            dx, dy = o.x - s.x, o.y - s.y
            dl = math.cos(s.heading) * dx + math.sin(s.heading) * dy
            dn = -math.sin(s.heading) * dx + math.cos(s.heading) * dy
            L = 0.5 * (a.vehicle.length + world.agents[j].vehicle.length)
            W = 0.5 * (a.vehicle.width + world.agents[j].vehicle.width)
            f[4] += mask[j] * math.exp(-math.hypot(dl / L, dn / W))
        ap, sp = acc, st
    return f


def _seg_dist(points, x, y):
    if len(points) == 1:
        return math.hypot(x - points[0][0], y - points[0][1])
    best = math.inf
    for (ax, ay), (bx, by) in zip(points[:-1], points[1:]):
        dx, dy = bx - ax, by - ay
        L2 = dx * dx + dy * dy
        s = 0.0 if L2 == 0 else min(max(((x - ax) * dx + (y - ay) * dy) / L2, 0.0), 1.0)
        best = min(best, math.hypot(x - ax - s * dx, y - ay - s * dy))
    return best


def two_lane_world(n_others=0, v_d=1.0):
    lane0 = ((-50.0, 0.0), (50.0, 0.0))
    agents = [AgentModel(VehicleParams(), v_d, lane0, 0.37,
                         CostWeights(1.0, 10.0, 0.02, 0.5, 5.0))
              for _ in range(2 + n_others)]
    return World(tuple(agents), 0.1)


@pytest.fixture
def world3():
    return two_lane_world(1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance reporting: one line per criterion, repeated in the terminal summary

ACCEPTANCE = pytest.StashKey[list]()


class _Criterion:
    def __init__(self, lines, number, title):
        self.lines, self.number, self.title = lines, number, title
        self.notes = []

    def note(self, text):
        self.notes.append(text)

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "FAIL" if exc_type else "PASS"
        line = (f"criterion {self.number:>2} {status}  {self.title}  "
                f"({time.perf_counter() - self.start:.1f} s)")
        if self.notes:
            line += "  [" + "; ".join(self.notes) + "]"
        self.lines.append(line)
        print(line)
        return False


@pytest.fixture
def criterion(request):
    lines = request.config.stash.setdefault(ACCEPTANCE, [])
    return lambda number, title: _Criterion(lines, number, title)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
