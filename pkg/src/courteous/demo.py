"""Demonstrations and the window-length problems built from them.

A demonstration is one driver's executed controls over ``L`` steps together
with everything needed to re-evaluate its cost: initial joint state, the
interacting car's and the surrounding cars' logged controls (fixed context)
and the per-agent cost models. In joint arrays the demonstrator sits at
index 0 (the planner's slot) and the interacting car at index 1, so the
courtesy machinery applies unchanged.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from courteous.costs import AgentModel, CostWeights, World, build_problem, cost_term
from courteous.courtesy import CourtesyMode, alternative_cost
from courteous.dynamics import VehicleParams
from courteous.optim import OptimizerSettings, optimize_controls
from courteous.response import HUMAN, ROBOT, Situation

DEMONSTRATOR, INTERACTING = ROBOT, HUMAN


@dataclass
class Demonstration:
    human_controls: np.ndarray  # (L, 2) the demonstrator
    robot_controls: np.ndarray  # (L, 2) the interacting car, replayed as context
    x0: np.ndarray  # (M, 4)
    models: tuple  # AgentModel per joint slot
    dt: float = 0.1
    surrounding: np.ndarray = None  # (M - 2, L, 2)
    prev: np.ndarray = None  # (M, 2) controls executed just before the window
    states: np.ndarray = None  # (L + 1, M, 4) logged states, when available
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.human_controls = np.asarray(self.human_controls, dtype=float).reshape(-1, 2)
        L = len(self.human_controls)
        if L < 2:
            raise ValueError("a demonstration needs at least two steps")
        self.robot_controls = np.asarray(self.robot_controls, dtype=float).reshape(L, 2)
        M = len(self.models)
        self.x0 = np.asarray(self.x0, dtype=float).reshape(M, 4)
        if self.surrounding is None:
            self.surrounding = np.zeros((M - 2, L, 2))
        self.surrounding = np.asarray(self.surrounding, dtype=float).reshape(M - 2, L, 2)
        self.prev = np.zeros((M, 2)) if self.prev is None else \
            np.asarray(self.prev, dtype=float).reshape(M, 2)
        if self.states is not None:
            self.states = np.asarray(self.states, dtype=float).reshape(L + 1, M, 4)

    @property
    def length(self) -> int:
        return len(self.human_controls)

    def world(self) -> World:
        return World(tuple(self.models), self.dt)

    def situation(self) -> Situation:
        return Situation(self.world(), self.x0, self.length, self.prev, self.surrounding)

    def controls(self, demo_u=None) -> np.ndarray:
        """(M, L, 2) joint controls, optionally with the demonstrator's replaced."""
        U = np.concatenate([[self.human_controls if demo_u is None else demo_u],
                            [self.robot_controls], self.surrounding])
        return U.reshape(len(self.models), self.length, 2)

    def positions(self, demo_u=None) -> np.ndarray:
        """Demonstrator positions after each step, shape (L, 2)."""
        if demo_u is None and self.states is not None:
            return self.states[1:, DEMONSTRATOR, :2].copy()
        X, _, _ = _rollout_problem(self, demo_u).evaluate(np.zeros(0))
        return X[DEMONSTRATOR, 1:, :2]

    def rollout(self, demo_u=None) -> np.ndarray:
        """(L + 1, M, 4) joint states under the logged or given controls."""
        X, _, _ = _rollout_problem(self, demo_u).evaluate(np.zeros(0))
        return np.transpose(X, (1, 0, 2))

    # serialization

    def to_dict(self) -> dict:
        return {
            "human_controls": self.human_controls.tolist(),
            "robot_controls": self.robot_controls.tolist(),
            "x0": self.x0.tolist(),
            "models": [_model_to_dict(m) for m in self.models],
            "dt": self.dt,
            "surrounding": self.surrounding.tolist(),
            "prev": self.prev.tolist(),
            "states": None if self.states is None else self.states.tolist(),
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Demonstration":
        M = len(d["models"])
        L = len(d["human_controls"])
        return cls(
            human_controls=d["human_controls"],
            robot_controls=d["robot_controls"],
            x0=d["x0"],
            models=tuple(_model_from_dict(m) for m in d["models"]),
            dt=float(d.get("dt", 0.1)),
            surrounding=np.asarray(d.get("surrounding") or np.zeros((M - 2, L, 2)), dtype=float),
            prev=d.get("prev"),
            states=d.get("states"),
            meta=dict(d.get("meta", {})),
        )


def _model_to_dict(m: AgentModel) -> dict:
    return {"vehicle": m.vehicle.to_dict(), "v_d": m.v_d,
            "target": [list(map(float, p)) for p in m.target],
            "lane_width": m.lane_width, "weights": m.weights.to_dict()}


def _model_from_dict(d: dict) -> AgentModel:
    return AgentModel(VehicleParams.from_dict(d.get("vehicle", {})), float(d["v_d"]),
                      tuple(tuple(map(float, p)) for p in d.get("target", [])),
                      float(d.get("lane_width", 0.37)),
                      CostWeights.from_dict(d.get("weights", {})))


def save_demos(demos, path) -> None:
    with open(path, "w") as fh:
        json.dump({"demonstrations": [d.to_dict() for d in demos]}, fh)


def load_demos(path) -> list:
    with open(path) as fh:
        return [Demonstration.from_dict(d) for d in json.load(fh)["demonstrations"]]


def _rollout_problem(demo: Demonstration, demo_u=None):
    return build_problem(demo.world(), demo.x0, demo.controls(demo_u), [], [])


def demo_alt_cost(demo: Demonstration, mode=CourtesyMode.MAINTAIN,
                  other_weights: CostWeights | None = None,
                  settings: OptimizerSettings = OptimizerSettings()) -> float:
    """Alternative-world cost of the interacting car over the window.

    It does not depend on the demonstrator's weights, so callers compute it
    once per demonstration.
    """
    sit = demo.situation()
    return alternative_cost(mode, sit, settings, other_weights, prev_uR=demo.prev[DEMONSTRATOR])


def demo_terms(demo: Demonstration, theta: CostWeights, alt: float | None = None,
               other_weights: CostWeights | None = None) -> list:
    """Cost terms of the demonstrator: its own features plus, when
    ``theta.lambda_c`` > 0, the hinge on the interacting car's cost."""
    world = demo.world()
    terms = [cost_term(world, DEMONSTRATOR, theta, demo.prev[DEMONSTRATOR])]
    if theta.lambda_c > 0:
        if alt is None:
            raise ValueError("the courtesy feature needs an alternative cost")
        w = world.agents[INTERACTING].weights if other_weights is None else other_weights
        terms.append(cost_term(world, INTERACTING, w, demo.prev[INTERACTING],
                               scale=theta.lambda_c, offset=alt, hinge=True))
    return terms


def demo_problem(demo: Demonstration, terms, goal_smooth: float = 0.0):
    """Kernel problem over the demonstrator's whole window."""
    return build_problem(demo.world(), demo.x0, demo.controls(), [DEMONSTRATOR], terms,
                         goal_smooth=goal_smooth)


def free_controls(demo: Demonstration, tol: float = 1e-6) -> np.ndarray:
    """Mask of demonstrator controls strictly inside their limits."""
    z = demo.human_controls.ravel()
    lim = demo.models[DEMONSTRATOR].vehicle.limits
    lo = np.tile(lim.lower(), demo.length)
    hi = np.tile(lim.upper(), demo.length)
    return (z > lo + tol) & (z < hi - tol)


def cost_hessian(prob, z, idx, h: float = 1e-5) -> np.ndarray:
    """Symmetrized central differences of the analytic gradient, restricted
    to the coordinates ``idx``."""
    z = np.asarray(z, dtype=float)
    H = np.empty((len(idx), len(idx)))
    for col, i in enumerate(idx):
        zp, zm = z.copy(), z.copy()
        zp[i] += h
        zm[i] -= h
        gp, gm = prob.value_and_grad(zp)[1], prob.value_and_grad(zm)[1]
        H[:, col] = (gp[idx] - gm[idx]) / (2 * h)
    return 0.5 * (H + H.T)


def plan_demo(demo: Demonstration, theta: CostWeights, alt: float | None = None,
              other_weights: CostWeights | None = None,
              settings: OptimizerSettings = OptimizerSettings(), init=None) -> np.ndarray:
    """Open-loop optimal controls for the demonstrator over the window with
    every other car replaying its logged controls."""
    prob = demo_problem(demo, demo_terms(demo, theta, alt, other_weights))
    limits = demo.models[DEMONSTRATOR].vehicle.limits
    L = demo.length
    init = np.zeros((L, 2)) if init is None else np.reshape(init, (L, 2))
    extra = [np.tile([a, 0.0], (L, 1)) for a in (limits.a_min, limits.a_max)]
    u, _ = optimize_controls(prob.value, init, limits, settings,
                             gradient=prob.value_and_grad, value_and_grad=True,
                             extra_inits=extra)
    return u
