"""Closed-loop receding-horizon simulation, metrics and CSV logs."""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from courteous.costs import build_problem, cost_term
from courteous.courtesy import (CourtesyMode, PlannerResult, PlannerSettings, alternative_costs,
                                plan_courteous)
from courteous.dynamics import Control, JointState, step
from courteous.optim import optimize_controls
from courteous.response import HUMAN, ROBOT, Situation, human_best_response, human_cost
from courteous.scenarios import Scenario, _polyline_distance


class SimulationError(RuntimeError):
    def __init__(self, message, log=None):
        super().__init__(message)
        self.log = log


@dataclass(frozen=True)
class SimSettings:
    planner: PlannerSettings = field(default_factory=PlannerSettings)
    check_alt_ordering: bool = False  # compute all three alternatives every step
    ordering_tol: float = 1e-3


@dataclass
class StepRecord:
    step: int
    time: float
    states: np.ndarray  # (M, 4) before the step
    controls: np.ndarray  # (M, 2) executed (clamped)
    plan: PlannerResult
    human_cost: float
    overlap: bool
    alternatives: dict | None = None


@dataclass
class Metrics:
    min_gap: float  # bumper gap in the human's lane frame
    min_clearance: float  # exact footprint distance
    human_min_accel: float
    inconvenience: float
    merge_order: str  # "Ahead" | "Behind" | "None"
    human_avg_speed: float
    collision: bool
    clear_first: str  # "robot" | "human" | "None"
    event_steps: dict
    human_cost_ratio: float
    ordering_violations: int = 0

    def row(self) -> dict:
        out = {
            "min_gap": self.min_gap,
            "min_clearance": self.min_clearance,
            "human_min_accel": self.human_min_accel,
            "inconvenience": self.inconvenience,
            "merge_order": self.merge_order,
            "human_avg_speed": self.human_avg_speed,
            "collision": int(self.collision),
            "clear_first": self.clear_first,
            "human_cost_ratio": self.human_cost_ratio,
            "ordering_violations": self.ordering_violations,
        }
        for k, v in sorted(self.event_steps.items()):
            out[f"event_{k}"] = "" if v is None else v
        return out


@dataclass
class SimLog:
    scenario: Scenario
    records: list
    final_states: np.ndarray
    metrics: Metrics | None = None

    def states(self) -> np.ndarray:
        """All visited joint states, (T + 1, M, 4)."""
        return np.array([r.states for r in self.records] + [self.final_states])

    def controls(self) -> np.ndarray:
        return np.array([r.controls for r in self.records]).reshape(-1, len(self.final_states), 2)


def _corners(state, dims):
    c, s = math.cos(state[2]), math.sin(state[2])
    hl, hw = 0.5 * dims[0], 0.5 * dims[1]
    return np.array([[state[0] + c * a - s * b, state[1] + s * a + c * b]
                     for a, b in ((hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw))])


def _seg_point(p, a, b):
    d = b - a
    t = min(max(float(np.dot(p - a, d) / np.dot(d, d)), 0.0), 1.0)
    return float(np.hypot(*(p - a - t * d)))


def _clearance(robot, human, dims_r, dims_h):
    """Exact distance between the two oriented footprints and an overlap flag."""
    A, B = _corners(robot, dims_r), _corners(human, dims_h)
    for P in (A, B):
        for i in range(4):
            e = P[(i + 1) % 4] - P[i]
            n = np.array([-e[1], e[0]])
            pa, pb = A @ n, B @ n
            if pa.max() < pb.min() or pb.max() < pa.min():
                gap = min(min(_seg_point(p, Q[i], Q[(i + 1) % 4]) for p in P for i in range(4))
                          for P, Q in ((A, B), (B, A)))
                return gap, False
    return 0.0, True


def _gap(robot, human, dims_r, dims_h):
    """Bumper gap in the human's lane frame.

    Center offsets are resolved along and across the human's heading and
    reduced by the mean half-dimensions. Returns (gap, dl) with ``dl`` the
    robot's longitudinal offset (positive: robot ahead).
    """
    dx, dy = robot[0] - human[0], robot[1] - human[1]
    c, s = math.cos(human[2]), math.sin(human[2])
    dl, dn = c * dx + s * dy, -s * dx + c * dy
    gx = max(abs(dl) - 0.5 * (dims_r[0] + dims_h[0]), 0.0)
    gy = max(abs(dn) - 0.5 * (dims_r[1] + dims_h[1]), 0.0)
    return math.hypot(gx, gy), dl


def _shift(u):
    u = np.asarray(u, dtype=float)
    return np.concatenate([u[1:], u[-1:]], axis=0) if len(u) else u


def agent_best_response(sit: Situation, agent: int, U, settings, warm=None):
    """Best response of any agent with every other sequence in ``U`` fixed."""
    term = cost_term(sit.world, agent, sit.weights(agent), sit.prev[agent])
    prob = build_problem(sit.world, sit.x0, U, [agent], [term])
    init = np.zeros((sit.horizon, 2)) if warm is None else warm
    u, _ = optimize_controls(prob.value, init, sit.limits(agent), settings,
                             gradient=prob.value_and_grad, value_and_grad=True)
    return u


def compute_metrics(scenario: Scenario, records: list, final_states) -> Metrics:
    states = np.array([r.states for r in records] + [final_states])
    dims_r = (scenario.robot.vehicle.length, scenario.robot.vehicle.width)
    dims_h = (scenario.human.vehicle.length, scenario.human.vehicle.width)
    gaps = [_gap(s[ROBOT], s[HUMAN], dims_r, dims_h) for s in states]
    clear = [_clearance(s[ROBOT], s[HUMAN], dims_r, dims_h) for s in states]
    min_gap = min(g[0] for g in gaps)
    collision = any(c[1] for c in clear)
    accels = [r.controls[HUMAN, 0] for r in records]
    court = [r.plan.courtesy_value for r in records if np.isfinite(r.plan.courtesy_value)]
    alts = [r.plan.alt_cost for r in records if np.isfinite(r.plan.alt_cost)]
    hcost = [r.human_cost for r in records if np.isfinite(r.human_cost)]

    final = states[-1]
    merge = "None"
    lane_dist = _dist_to_polyline(scenario.human.target, final[ROBOT, 0], final[ROBOT, 1])
    if scenario.human.target and lane_dist < scenario.human.lane_width / 2:
        merge = "Ahead" if gaps[-1][1] > 0 else "Behind"

    event_steps = {}
    for name, ev in scenario.events.items():
        idx = ROBOT if ev.agent == "robot" else HUMAN
        event_steps[name] = next((t for t, s in enumerate(states)
                                  if ev.reached(s[idx, 0], s[idx, 1])), None)
    clear_first = "None"
    tr, th = event_steps.get("robot_clear"), event_steps.get("human_clear")
    if tr is not None or th is not None:
        tr = math.inf if tr is None else tr
        th = math.inf if th is None else th
        clear_first = "robot" if tr < th else "human" if th < tr else "None"

    return Metrics(
        min_gap=float(min_gap),
        min_clearance=float(min(c[0] for c in clear)),
        human_min_accel=float(min(accels)) if accels else 0.0,
        inconvenience=float(np.mean(court)) if court else 0.0,
        merge_order=merge,
        human_avg_speed=float(np.mean(states[:, HUMAN, 3])),
        collision=bool(collision),
        clear_first=clear_first,
        event_steps=event_steps,
        human_cost_ratio=float(np.mean(hcost) / np.mean(alts)) if alts and hcost else math.nan,
        ordering_violations=sum(int(r.alternatives.get("violation", 0))
                                for r in records if r.alternatives),
    )


def _dist_to_polyline(points, x, y):
    return _polyline_distance(points, x, y) if len(points) else math.inf


def simulate(scenario: Scenario, settings: SimSettings = SimSettings()) -> SimLog:
    """Run the receding-horizon loop for ``scenario.duration`` steps.

    Each step the robot plans courteously, the human best-responds to the
    robot's committed plan, third parties follow their policies, and every
    agent executes its first control.
    """
    world = scenario.world()
    N, dt = scenario.horizon, scenario.dt
    params = scenario.params()
    M = len(params)
    lam, mode = scenario.courtesy.lambda_c, scenario.courtesy.mode
    psettings = replace(settings.planner, softplus_temp=scenario.courtesy.softplus_temp)

    x = scenario.initial_state()
    prev = np.zeros((M, 2))
    uR_plan, uH_pred, uH_plan = None, None, None
    other_plans = [np.zeros((N, 2)) for _ in scenario.others]
    records = []

    for t in range(scenario.duration):
        X0 = x.as_array()
        others = []
        for i, spec in enumerate(scenario.others):
            if spec.policy == "scripted":
                others.append(spec.scripted_controls(t, N))
            elif spec.policy == "responsive":
                others.append(_shift(other_plans[i]))
            else:
                others.append(np.zeros((N, 2)))
        sit = Situation(world, X0, N, prev, np.array(others).reshape(M - 2, N, 2))
        try:
            plan = plan_courteous(
                sit, lam, mode, prev_uR=prev[ROBOT], settings=psettings,
                warm_uR=None if uR_plan is None else _shift(uR_plan),
                warm_uH=None if uH_pred is None else _shift(uH_pred))
            uH = human_best_response(sit, plan.uR, psettings.human,
                                     warm=None if uH_plan is None else _shift(uH_plan))
            U = sit.controls(plan.uR, uH)
            for i, spec in enumerate(scenario.others):
                if spec.policy == "responsive":
                    U[2 + i] = agent_best_response(sit, 2 + i, U, psettings.human,
                                                   warm=others[i])
                    other_plans[i] = U[2 + i]
        except Exception as exc:  # surfaced with the partial log
            log = SimLog(scenario, records, X0)
            raise SimulationError(f"planning failed at step {t}: {exc}", log) from exc

        alternatives = None
        if settings.check_alt_ordering:
            alts = alternative_costs(sit, psettings.human, prev_uR=prev[ROBOT])
            a, b, c = (alts[m] for m in (CourtesyMode.NOT_THERE, CourtesyMode.COLLABORATIVE,
                                         CourtesyMode.MAINTAIN))
            tol = settings.ordering_tol
            alternatives = {m.value: v for m, v in alts.items()}
            alternatives["violation"] = not (a <= b + tol and b <= c + tol)

        new_states, executed = [], np.zeros((M, 2))
        for i, (s, p) in enumerate(zip(x.agents, params)):
            u, _ = p.limits.clamp(Control(*U[i, 0]))
            executed[i] = (u.accel, u.steer)
            new_states.append(step(s, u, dt, p)[0])
        _, overlap = _clearance(X0[ROBOT], X0[HUMAN], (params[0].length, params[0].width),
                                (params[1].length, params[1].width))
        records.append(StepRecord(t, t * dt, X0, executed, plan,
                                  human_cost(sit, plan.uR, plan.uH_predicted), overlap,
                                  alternatives))
        x = JointState(new_states[0], new_states[1], tuple(new_states[2:]))
        prev = executed
        uR_plan, uH_pred, uH_plan = plan.uR, plan.uH_predicted, uH

    log = SimLog(scenario, records, x.as_array())
    log.metrics = compute_metrics(scenario, records, log.final_states)
    return log


def sweep_lambda(scenario: Scenario, lambdas, settings: SimSettings = SimSettings(),
                 workers: int = 1) -> list:
    """Simulate once per lambda value; rows come back in input order.

    A failing run yields ``(lambda, exception)`` for that row.
    """
    lambdas = [float(l) for l in lambdas]
    if any(l < 0 for l in lambdas):
        raise ValueError("lambda values must be nonnegative")

    def run(lam):
        sc = replace(scenario, courtesy=replace(scenario.courtesy, lambda_c=lam))
        try:
            return lam, simulate(sc, settings).metrics
        except Exception as exc:
            return lam, exc

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(run, lambdas))
    return [run(l) for l in lambdas]


# CSV output -------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def log_columns(scenario: Scenario) -> list:
    cols = ["step", "time"]
    for a in scenario.agents:
        cols += [f"{a.name}_{k}" for k in ("x", "y", "heading", "speed")]
    for a in scenario.agents:
        cols += [f"{a.name}_accel", f"{a.name}_steer"]
    cols += ["selfish_cost", "courtesy_value", "alt_cost", "compound_cost", "human_cost",
             "iterations", "converged", "overlap"]
    return cols


def write_log_csv(log: SimLog, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(log_columns(log.scenario))
    for r in log.records:
        p = r.plan
        row = [r.step, r.time] + list(r.states.ravel()) + list(r.controls.ravel())
        row += [p.selfish_cost, p.courtesy_value, p.alt_cost, p.compound_cost, r.human_cost,
                p.iterations, p.converged, r.overlap]
        w.writerow([_fmt(v) for v in row])


def write_summary_csv(rows, fh) -> None:
    """``rows`` are ``(lambda, Metrics | Exception)`` pairs."""
    w = csv.writer(fh, lineterminator="\n")
    keys = None
    for lam, m in rows:
        if isinstance(m, Metrics):
            keys = list(m.row())
            break
    keys = keys or []
    w.writerow(["lambda"] + keys + ["error"])
    for lam, m in rows:
        if isinstance(m, Metrics):
            d = m.row()
            w.writerow([_fmt(lam)] + [_fmt(d.get(k, "")) for k in keys] + [""])
        else:
            w.writerow([_fmt(lam)] + [""] * len(keys) + [str(m)])


def log_to_csv_text(log: SimLog) -> str:
    buf = io.StringIO()
    write_log_csv(log, buf)
    return buf.getvalue()
