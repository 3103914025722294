"""Discrete-time kinematic bicycle model and joint-system rollout."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


def wrap_angle(h: float) -> float:
    """Normalize an angle to (-pi, pi]."""
    while h > math.pi:
        h -= 2.0 * math.pi
    while h <= -math.pi:
        h += 2.0 * math.pi
    return h


@dataclass(frozen=True)
class AgentState:
    x: float  # longitudinal position (m)
    y: float  # lateral position (m)
    heading: float  # rad
    speed: float  # m/s

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.heading, self.speed])

    @classmethod
    def from_array(cls, a) -> "AgentState":
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]))


@dataclass(frozen=True)
class Control:
    accel: float = 0.0  # m/s^2
    steer: float = 0.0  # front wheel angle (rad)

    def as_array(self) -> np.ndarray:
        return np.array([self.accel, self.steer])


@dataclass(frozen=True)
class ControlLimits:
    a_min: float = -1.0
    a_max: float = 0.5
    steer_max: float = 0.6
    v_max: float = 1.0

    def clamp(self, control: Control) -> tuple[Control, bool]:
        a = min(max(control.accel, self.a_min), self.a_max)
        s = min(max(control.steer, -self.steer_max), self.steer_max)
        return Control(a, s), (a != control.accel or s != control.steer)

    def lower(self) -> np.ndarray:
        return np.array([self.a_min, -self.steer_max])

    def upper(self) -> np.ndarray:
        return np.array([self.a_max, self.steer_max])


@dataclass(frozen=True)
class VehicleParams:
    length: float = 0.45
    width: float = 0.20
    wheelbase: float = 0.26
    limits: ControlLimits = field(default_factory=ControlLimits)

    def kernel_row(self) -> list[float]:
        lim = self.limits
        return [self.wheelbase, lim.v_max, lim.a_min, lim.a_max, lim.steer_max]

    def to_dict(self) -> dict:
        lim = self.limits
        return {"length": self.length, "width": self.width, "wheelbase": self.wheelbase,
                "a_min": lim.a_min, "a_max": lim.a_max, "steer_max": lim.steer_max,
                "v_max": lim.v_max}

    @classmethod
    def from_dict(cls, d: dict) -> "VehicleParams":
        """Missing keys fall back to the defaults."""
        lim = ControlLimits(**{k: float(d[k]) for k in ("a_min", "a_max", "steer_max", "v_max")
                               if k in d})
        return cls(**{k: float(d[k]) for k in ("length", "width", "wheelbase") if k in d},
                   limits=lim)


def step(state: AgentState, control: Control, dt: float,
         params: VehicleParams = VehicleParams()) -> tuple[AgentState, bool]:
    """Advance one vehicle by ``dt`` with forward Euler.

    Out-of-range controls are clamped; the returned flag says whether that
    happened.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    u, saturated = params.limits.clamp(control)
    v = state.speed
    heading = wrap_angle(state.heading + v / params.wheelbase * math.tan(u.steer) * dt)
    x = state.x + v * math.cos(state.heading) * dt
    y = state.y + v * math.sin(state.heading) * dt
    speed = min(max(v + u.accel * dt, 0.0), params.limits.v_max)
    return AgentState(x, y, heading, speed), saturated


@dataclass(frozen=True)
class JointState:
    robot: AgentState
    human: AgentState
    others: tuple[AgentState, ...] = ()

    @property
    def agents(self) -> tuple[AgentState, ...]:
        return (self.robot, self.human) + tuple(self.others)

    def as_array(self) -> np.ndarray:
        return np.array([a.as_array() for a in self.agents])

    @classmethod
    def from_array(cls, a) -> "JointState":
        states = [AgentState.from_array(r) for r in a]
        return cls(states[0], states[1], tuple(states[2:]))


@dataclass
class Trajectory:
    controls: np.ndarray  # (N, 2)
    states: np.ndarray  # (N + 1, 4)
    dt: float

    @classmethod
    def from_controls(cls, x0: AgentState, controls, dt: float,
                      params: VehicleParams = VehicleParams()) -> "Trajectory":
        controls = np.asarray(controls, dtype=float).reshape(-1, 2)
        states = [x0]
        for a, s in controls:
            states.append(step(states[-1], Control(a, s), dt, params)[0])
        return cls(controls, np.array([s.as_array() for s in states]), dt)

    def __len__(self) -> int:
        return len(self.controls)

    def is_consistent(self, params: VehicleParams = VehicleParams()) -> bool:
        replay = Trajectory.from_controls(
            AgentState.from_array(self.states[0]), self.controls, self.dt, params)
        return bool(np.array_equal(replay.states, self.states))


def rollout(x0: JointState, uR, uH, dt: float, params=None,
            others_controls=None) -> list[JointState]:
    """Roll the joint system forward; returns N + 1 joint states.

    ``params`` is one VehicleParams per agent (defaults for all if omitted).
    Third-party agents follow ``others_controls`` (one (N, 2) sequence each),
    or hold zero controls when none are given.
    """
    uR = np.asarray(uR, dtype=float).reshape(-1, 2)
    uH = np.asarray(uH, dtype=float).reshape(-1, 2)
    if len(uR) != len(uH):
        raise ValueError("robot and human sequences differ in length")
    n_agents = len(x0.agents)
    params = list(params) if params is not None else [VehicleParams()] * n_agents
    if others_controls is None:
        others_controls = [np.zeros_like(uR)] * (n_agents - 2)
    seqs = [uR, uH] + [np.asarray(u, dtype=float).reshape(-1, 2) for u in others_controls]
    out = [x0]
    for k in range(len(uR)):
        nxt = [step(s, Control(*seqs[i][k]), dt, params[i])[0]
               for i, s in enumerate(out[-1].agents)]
        out.append(JointState(nxt[0], nxt[1], tuple(nxt[2:])))
    return out
