"""Courteous planning: alternative-world costs, the courtesy hinge, and the
alternating robot/human solver."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from courteous.costs import CostWeights, build_problem, cost_term
from courteous.optim import OptimizerSettings, optimize_controls
from courteous.response import HUMAN, ROBOT, Situation, human_best_response, human_cost


class CourtesyMode(str, Enum):
    NOT_THERE = "not_there"
    COLLABORATIVE = "collaborative"
    MAINTAIN = "maintain"

    @classmethod
    def parse(cls, value) -> "CourtesyMode":
        if isinstance(value, cls):
            return value
        aliases = {"notthere": "not_there", "maintainbehavior": "maintain",
                   "maintain_behavior": "maintain"}
        key = str(value).lower().replace("-", "_")
        return cls(aliases.get(key.replace("_", ""), key))


@dataclass(frozen=True)
class PlannerSettings:
    robot: OptimizerSettings = field(default_factory=OptimizerSettings)
    human: OptimizerSettings = field(default_factory=OptimizerSettings)
    max_alt_iters: int = 10
    alt_tol: float = 1e-4
    softplus_temp: float = 0.0  # 0 keeps the hinge exact
    robot_extra_inits: bool = True  # also start from full brake, full throttle, full lock


@dataclass
class PlannerResult:
    uR: np.ndarray
    uH_predicted: np.ndarray
    selfish_cost: float
    courtesy_value: float
    alt_cost: float
    compound_cost: float
    iterations: int
    converged: bool


def _last_control(prev_uR) -> np.ndarray:
    if prev_uR is None:
        return np.zeros(2)
    return np.asarray(prev_uR, dtype=float).reshape(-1, 2)[-1]


def maintained_plan(sit: Situation, prev_uR) -> np.ndarray:
    """The robot repeating its last executed control over the horizon."""
    return np.tile(_last_control(prev_uR), (sit.horizon, 1))


def alternative_solution(mode, sit: Situation, settings: OptimizerSettings = OptimizerSettings(),
                         thetaH: CostWeights | None = None, prev_uR=None):
    """Return ``(alt_cost, uR_alt, uH_alt)`` for one alternative world.

    ``uR_alt`` is None for the robot-absent world.
    """
    mode = CourtesyMode.parse(mode)
    if mode is CourtesyMode.NOT_THERE:
        uH = human_best_response(sit, sit.zeros(), settings, thetaH, exclude_robot=True)
        return human_cost(sit, sit.zeros(), uH, thetaH, exclude_robot=True), None, uH

    uR_keep = maintained_plan(sit, prev_uR)
    uH_keep = human_best_response(sit, uR_keep, settings, thetaH)
    c_keep = human_cost(sit, uR_keep, uH_keep, thetaH)
    if mode is CourtesyMode.MAINTAIN:
        return c_keep, uR_keep, uH_keep

    # joint minimization of C_H over both sequences; the maintained pair is a
    # feasible start, so the result can only improve on it
    thetaH = sit.weights(HUMAN) if thetaH is None else thetaH
    term = cost_term(sit.world, HUMAN, thetaH, sit.prev[HUMAN])
    prob = build_problem(sit.world, sit.x0, sit.controls(), [ROBOT, HUMAN], [term])
    lo = np.stack([sit.limits(ROBOT).lower(), sit.limits(HUMAN).lower()])
    hi = np.stack([sit.limits(ROBOT).upper(), sit.limits(HUMAN).upper()])
    lo = np.repeat(lo, sit.horizon, axis=0).reshape(2, sit.horizon, 2)
    hi = np.repeat(hi, sit.horizon, axis=0).reshape(2, sit.horizon, 2)
    init = np.stack([uR_keep, uH_keep])
    uH_alone = human_best_response(sit, sit.zeros(), settings, thetaH, exclude_robot=True)
    brake = np.tile(sit.limits(ROBOT).lower() * [1.0, 0.0], (sit.horizon, 1))
    extra = [np.stack([brake, uH_alone]), np.stack([uR_keep, uH_alone])]
    z, value = optimize_controls(prob.value, init, (lo, hi), settings,
                                 gradient=prob.value_and_grad, value_and_grad=True,
                                 extra_inits=extra)
    if value > c_keep:
        return c_keep, uR_keep, uH_keep
    return value, z[0], z[1]


def alternative_cost(mode, sit: Situation, settings: OptimizerSettings = OptimizerSettings(),
                     thetaH: CostWeights | None = None, prev_uR=None) -> float:
    """C_H^alt for ``mode``; MaintainBehavior without history holds zero controls."""
    return alternative_solution(mode, sit, settings, thetaH, prev_uR)[0]


def alternative_costs(sit: Situation, settings: OptimizerSettings = OptimizerSettings(),
                      thetaH: CostWeights | None = None, prev_uR=None) -> dict:
    """All three alternatives, cross warm-started so their ordering is kept."""
    out = {m: alternative_solution(m, sit, settings, thetaH, prev_uR) for m in CourtesyMode}
    alone = out[CourtesyMode.NOT_THERE]
    collab = out[CourtesyMode.COLLABORATIVE]
    # the human's collaborative plan is also feasible in the robot-free world
    c = human_cost(sit, sit.zeros(), collab[2], thetaH, exclude_robot=True)
    if c < alone[0]:
        uH = human_best_response(sit, sit.zeros(), settings, thetaH, warm=collab[2],
                                 exclude_robot=True)
        out[CourtesyMode.NOT_THERE] = (
            min(c, human_cost(sit, sit.zeros(), uH, thetaH, exclude_robot=True)), None, uH)
    return {m: v[0] for m, v in out.items()}


def courtesy_term(sit: Situation, uR, uH, alt_cost: float,
                  thetaH: CostWeights | None = None) -> float:
    """Hinge-clipped increase of the human's cost over the alternative."""
    return max(0.0, human_cost(sit, uR, uH, thetaH) - alt_cost)


def selfish_cost(sit: Situation, uR, uH, thetaR: CostWeights | None = None) -> float:
    thetaR = sit.weights(ROBOT) if thetaR is None else thetaR
    term = cost_term(sit.world, ROBOT, thetaR, sit.prev[ROBOT])
    return build_problem(sit.world, sit.x0, sit.controls(None, uH), [ROBOT], [term]).value(
        np.ravel(uR))


def _score(sit, uR, uH, thetaR, thetaH, lambda_c, alt_cost):
    c_self = selfish_cost(sit, uR, uH, thetaR)
    court = courtesy_term(sit, uR, uH, alt_cost, thetaH) if alt_cost is not None else 0.0
    return c_self, court, c_self + lambda_c * court


def compound_cost(sit: Situation, uR, lambda_c: float, alt_cost: float,
                  thetaR: CostWeights | None = None, thetaH: CostWeights | None = None,
                  settings: OptimizerSettings = OptimizerSettings(), warm=None) -> float:
    """Selfish cost plus ``lambda_c`` times courtesy, at the human's best response."""
    if lambda_c < 0:
        raise ValueError("lambda_c must be nonnegative")
    uH = human_best_response(sit, uR, settings, thetaH, warm)
    return _score(sit, uR, uH, thetaR, thetaH, lambda_c, alt_cost)[2]


def _robot_problem(sit, uH, thetaR, thetaH, lambda_c, alt_cost, temp):
    thetaR = sit.weights(ROBOT) if thetaR is None else thetaR
    thetaH = sit.weights(HUMAN) if thetaH is None else thetaH
    terms = [cost_term(sit.world, ROBOT, thetaR, sit.prev[ROBOT])]
    if lambda_c > 0:
        terms.append(cost_term(sit.world, HUMAN, thetaH, sit.prev[HUMAN], scale=lambda_c,
                               offset=alt_cost, hinge=True))
    return build_problem(sit.world, sit.x0, sit.controls(None, uH), [ROBOT], terms, temp)


def plan_courteous(sit: Situation, lambda_c: float, mode=CourtesyMode.NOT_THERE,
                   thetaR: CostWeights | None = None, thetaH: CostWeights | None = None,
                   prev_uR=None, settings: PlannerSettings = PlannerSettings(),
                   warm_uR=None, warm_uH=None, alt_cost: float | None = None,
                   compute_alt: bool = True) -> PlannerResult:
    """Alternating minimization of the compound robot cost.

    Holds the human plan fixed while optimizing the robot's, then refreshes
    the human best response; stops when an outer iteration improves the
    compound cost by less than ``alt_tol``. Only improving iterates are kept.
    """
    if lambda_c < 0:
        raise ValueError("lambda_c must be nonnegative")
    if alt_cost is None and (compute_alt or lambda_c > 0):
        alt_cost = alternative_cost(mode, sit, settings.human, thetaH, prev_uR)
    limits = sit.limits(ROBOT)
    extra = []
    if settings.robot_extra_inits:
        extra = [np.tile([a, st], (sit.horizon, 1))
                 for a, st in ((limits.a_min, 0.0), (limits.a_max, 0.0),
                               (limits.a_max, limits.steer_max),
                               (limits.a_max, -limits.steer_max))]

    uR = sit.zeros() if warm_uR is None else np.reshape(warm_uR, (sit.horizon, 2)).copy()
    uH = human_best_response(sit, uR, settings.human, thetaH, warm_uH)
    best = _score(sit, uR, uH, thetaR, thetaH, lambda_c, alt_cost)
    converged, iterations = False, 0
    for iterations in range(1, settings.max_alt_iters + 1):
        prob = _robot_problem(sit, uH, thetaR, thetaH, lambda_c, alt_cost,
                              settings.softplus_temp)
        uR_new, _ = optimize_controls(
            prob.value, uR, limits, settings.robot,
            gradient=prob.value_and_grad, value_and_grad=True, extra_inits=extra)
        uH_new = human_best_response(sit, uR_new, settings.human, thetaH, uH)
        score = _score(sit, uR_new, uH_new, thetaR, thetaH, lambda_c, alt_cost)
        if score[2] >= best[2]:
            converged = True
            break
        gain = best[2] - score[2]
        uR, uH, best = uR_new, uH_new, score
        if gain < settings.alt_tol:
            converged = True
            break
    return PlannerResult(
        uR=uR, uH_predicted=uH, selfish_cost=best[0],
        courtesy_value=best[1] if alt_cost is not None else float("nan"),
        alt_cost=alt_cost if alt_cost is not None else float("nan"),
        compound_cost=best[2], iterations=iterations, converged=converged)


def plan_selfish(sit: Situation, thetaR: CostWeights | None = None,
                 thetaH: CostWeights | None = None, settings: PlannerSettings = PlannerSettings(),
                 warm_uR=None, warm_uH=None) -> PlannerResult:
    """The baseline planner: alternating scheme on the selfish cost alone."""
    return plan_courteous(sit, 0.0, thetaR=thetaR, thetaH=thetaH, settings=settings,
                          warm_uR=warm_uR, warm_uH=warm_uH, compute_alt=False)
