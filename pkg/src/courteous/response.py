"""Human model: best response to a fixed robot plan."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from courteous.costs import CostWeights, World, build_problem, cost_term
from courteous.optim import OptimizerSettings, optimize_controls

ROBOT, HUMAN = 0, 1


@dataclass
class Situation:
    """Everything fixed during one planning cycle.

    ``prev`` holds each agent's last executed control (the jerk and
    steering-rate features start from it); ``others`` the predicted
    third-party control sequences over the horizon.
    """

    world: World
    x0: np.ndarray  # (M, 4)
    horizon: int
    prev: np.ndarray = None  # (M, 2)
    others: np.ndarray = None  # (M - 2, N, 2)

    def __post_init__(self):
        M = len(self.world)
        self.x0 = np.asarray(self.x0, dtype=float).reshape(M, 4)
        if self.prev is None:
            self.prev = np.zeros((M, 2))
        self.prev = np.asarray(self.prev, dtype=float).reshape(M, 2)
        if self.others is None:
            self.others = np.zeros((M - 2, self.horizon, 2))
        self.others = np.asarray(self.others, dtype=float).reshape(M - 2, self.horizon, 2)

    def controls(self, uR=None, uH=None) -> np.ndarray:
        U = np.zeros((len(self.world), self.horizon, 2))
        if uR is not None:
            U[ROBOT] = np.reshape(uR, (self.horizon, 2))
        if uH is not None:
            U[HUMAN] = np.reshape(uH, (self.horizon, 2))
        U[2:] = self.others
        return U

    def limits(self, agent: int):
        return self.world.agents[agent].vehicle.limits

    def weights(self, agent: int) -> CostWeights:
        return self.world.agents[agent].weights

    def zeros(self) -> np.ndarray:
        return np.zeros((self.horizon, 2))


def human_problem(sit: Situation, uR, thetaH: CostWeights | None = None,
                  exclude_robot: bool = False):
    thetaH = sit.weights(HUMAN) if thetaH is None else thetaH
    term = cost_term(sit.world, HUMAN, thetaH, sit.prev[HUMAN],
                     exclude=(ROBOT,) if exclude_robot else ())
    return build_problem(sit.world, sit.x0, sit.controls(uR, None), [HUMAN], [term])


def human_cost(sit: Situation, uR, uH, thetaH: CostWeights | None = None,
               exclude_robot: bool = False) -> float:
    """C_H for given robot and human sequences."""
    return human_problem(sit, uR, thetaH, exclude_robot).value(np.ravel(uH))


def _solve(prob, sit, agent, init, settings, extra_inits=()):
    return optimize_controls(prob.value, init, sit.limits(agent), settings,
                             gradient=prob.value_and_grad, value_and_grad=True,
                             extra_inits=extra_inits)


def human_best_response(sit: Situation, uR, settings: OptimizerSettings = OptimizerSettings(),
                        thetaH: CostWeights | None = None, warm=None,
                        exclude_robot: bool = False) -> np.ndarray:
    """Human sequence minimizing C_H with the robot plan held fixed."""
    prob = human_problem(sit, uR, thetaH, exclude_robot)
    init = sit.zeros() if warm is None else np.reshape(warm, (sit.horizon, 2))
    uH, _ = _solve(prob, sit, HUMAN, init, settings)
    return uH


def human_response_cost(sit: Situation, uR, settings: OptimizerSettings = OptimizerSettings(),
                        thetaH: CostWeights | None = None, warm=None) -> float:
    """C_H evaluated at the human's best response to ``uR``."""
    uH = human_best_response(sit, uR, settings, thetaH, warm)
    return human_cost(sit, uR, uH, thetaH)
