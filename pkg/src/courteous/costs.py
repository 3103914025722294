"""Feature functions and linear trajectory costs.

Every cost evaluation goes through a kernel ``Problem``: the joint system is
rolled out and each cost term sums per-step features of its agent evaluated
at the state reached after that step's control.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from courteous.dynamics import JointState, VehicleParams
from courteous.kernel import Problem

FEATURES = ("f_d", "f_acc", "f_steer", "f_g", "f_s")


@dataclass(frozen=True)
class FeatureVector:
    f_d: float = 0.0
    f_acc: float = 0.0
    f_steer: float = 0.0
    f_g: float = 0.0
    f_s: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.f_d, self.f_acc, self.f_steer, self.f_g, self.f_s])

    @classmethod
    def from_array(cls, a) -> "FeatureVector":
        return cls(*(float(v) for v in a))


@dataclass(frozen=True)
class CostWeights:
    theta_g: float = 1.0
    theta_d: float = 0.0
    theta_acc: float = 0.0
    theta_steer: float = 0.0
    theta_s: float = 0.0
    lambda_c: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) >= 0:
                raise ValueError(f"{f.name} must be nonnegative")

    def vector(self) -> np.ndarray:
        """Weights aligned with FeatureVector order."""
        return np.array([self.theta_d, self.theta_acc, self.theta_steer,
                         self.theta_g, self.theta_s])

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "CostWeights":
        return cls(**{k: float(v) for k, v in d.items()})

    def scaled(self, alpha: float) -> "CostWeights":
        return CostWeights(**{k: alpha * v for k, v in self.to_dict().items()})


ZERO_WEIGHTS = CostWeights(theta_g=0.0)


@dataclass(frozen=True)
class AgentModel:
    """What a cost term needs to know about one agent."""

    vehicle: VehicleParams = field(default_factory=VehicleParams)
    v_d: float = 1.0
    target: tuple = ()  # polyline of (x, y) points; empty disables f_g
    lane_width: float = 0.37
    weights: CostWeights = field(default_factory=CostWeights)


@dataclass(frozen=True)
class World:
    """Per-agent models in joint order: robot, human, then third parties."""

    agents: tuple
    dt: float = 0.1

    def __len__(self):
        return len(self.agents)


@dataclass
class Term:
    agent: int
    weights: np.ndarray
    prev: np.ndarray
    mask: np.ndarray
    scale: float = 1.0
    offset: float = 0.0
    hinge: bool = False


def cost_term(world: World, agent: int, weights: CostWeights, prev=None,
              exclude=(), scale=1.0, offset=0.0, hinge=False) -> Term:
    mask = np.ones(len(world))
    mask[agent] = 0.0
    for j in exclude:
        mask[j] = 0.0
    prev = np.zeros(2) if prev is None else np.asarray(prev, dtype=float).reshape(2)
    return Term(agent, weights.vector(), prev, mask, scale, offset, hinge)


def build_problem(world: World, x0, U, decision, terms, temp: float = 0.0,
                  backend=None, goal_smooth: float = 0.0) -> Problem:
    """Assemble a kernel problem.

    ``x0`` is (M, 4), ``U`` the (M, N, 2) base controls; agents listed in
    ``decision`` have their controls replaced by the decision vector.
    ``backend`` overrides the kernel class picked at import.
    ``goal_smooth`` > 0 replaces the goal distance ``d`` by
    ``sqrt(d**2 + goal_smooth**2) - goal_smooth``, which removes the kink on
    the centerline; the default keeps the exact distance.
    """
    x0 = np.asarray(x0, dtype=float).reshape(len(world), 4)
    U = np.asarray(U, dtype=float)
    paths, offs = [], [0]
    for t in terms:
        pts = np.asarray(world.agents[t.agent].target, dtype=float).reshape(-1, 2)
        paths.append(pts)
        offs.append(offs[-1] + len(pts))
    path = np.concatenate(paths) if paths else np.zeros((0, 2))
    return (backend or Problem)(
        x0, U, np.asarray(decision, dtype=np.int32),
        np.array([a.vehicle.kernel_row() for a in world.agents]),
        np.array([[a.vehicle.length, a.vehicle.width] for a in world.agents]),
        world.dt,
        np.array([t.agent for t in terms], dtype=np.int32),
        np.array([t.weights for t in terms]).reshape(len(terms), 5),
        np.array([world.agents[t.agent].v_d for t in terms], dtype=float),
        np.array([t.prev for t in terms]).reshape(len(terms), 2),
        np.array([t.mask for t in terms]).reshape(len(terms), len(world)),
        np.array([t.scale for t in terms], dtype=float),
        np.array([t.offset for t in terms], dtype=float),
        np.array([int(t.hinge) for t in terms], dtype=np.int32),
        np.array([world.agents[t.agent].lane_width for t in terms], dtype=float),
        np.array(offs, dtype=np.int32),
        path,
        temp,
        goal_smooth,
    )


def joint_controls(world: World, uR, uH, others=None) -> np.ndarray:
    """Stack robot, human and third-party sequences into (M, N, 2)."""
    uR = np.asarray(uR, dtype=float).reshape(-1, 2)
    uH = np.asarray(uH, dtype=float).reshape(-1, 2)
    U = np.zeros((len(world), len(uR), 2))
    U[0], U[1] = uR, uH
    for i, u in enumerate(others or ()):
        U[2 + i] = np.asarray(u, dtype=float).reshape(-1, 2)
    return U


def _as_x0(x0) -> np.ndarray:
    return x0.as_array() if isinstance(x0, JointState) else np.asarray(x0, dtype=float)


def feature_sums(world: World, x0, uR, uH, perspective: int, prev_u=None,
                 others=None, exclude=()) -> FeatureVector:
    """Feature totals over the rolled-out horizon for one agent."""
    U = joint_controls(world, uR, uH, others)
    term = cost_term(world, perspective, CostWeights(), prev_u, exclude)
    prob = build_problem(world, _as_x0(x0), U, [], [term])
    _, F, _ = prob.evaluate(np.zeros(0))
    return FeatureVector.from_array(F[0])


def cumulative_cost(world: World, x0, uR, uH, weights: CostWeights, perspective: int,
                    prev_u=None, others=None, exclude=()) -> float:
    phi = feature_sums(world, x0, uR, uH, perspective, prev_u, others, exclude)
    return float(weights.vector() @ phi.as_array())


def stage_features(world: World, state, uR, uH, prev_u, perspective: int,
                   others=None, exclude=()) -> FeatureVector:
    """Features of one transition, evaluated at the successor state."""
    return feature_sums(world, state, np.reshape(uR, (1, 2)), np.reshape(uH, (1, 2)),
                        perspective, prev_u,
                        [np.reshape(u, (1, 2)) for u in (others or ())], exclude)
