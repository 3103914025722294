"""Road geometry, agents and built-in interaction scenarios (1/10-scale world)."""
from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from courteous.costs import AgentModel, CostWeights, World
from courteous.courtesy import CourtesyMode
from courteous.dynamics import AgentState, ControlLimits, JointState, VehicleParams

LANE_WIDTH = 0.37
SPEED_LIMIT = 1.0

POLICIES = ("planner", "best_response", "scripted", "responsive", "static")


class ScenarioError(ValueError):
    pass


@dataclass
class Lane:
    centerline: list
    width: float = LANE_WIDTH


@dataclass
class AgentSpec:
    name: str
    state: AgentState
    target: list  # goal polyline [[x, y], ...]
    weights: CostWeights = field(default_factory=CostWeights)
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    v_d: float | None = None  # None: the scenario speed limit
    lane_width: float = LANE_WIDTH
    policy: str = "best_response"
    script: list = field(default_factory=list)  # scripted (accel, steer) per step

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ScenarioError(f"unknown policy {self.policy!r}")

    def scripted_controls(self, t0: int, n: int) -> np.ndarray:
        """Script controls for steps t0..t0+n-1; zero after the script ends."""
        out = np.zeros((n, 2))
        for k in range(n):
            if t0 + k < len(self.script):
                out[k] = self.script[t0 + k]
        return out


@dataclass
class CourtesyConfig:
    mode: CourtesyMode = CourtesyMode.NOT_THERE
    lambda_c: float = 0.0
    softplus_temp: float = 0.0


@dataclass
class Event:
    """An agent crossing into the half-plane (p - point) . normal > 0."""

    agent: str  # "robot" or "human"
    point: list
    normal: list

    def reached(self, x: float, y: float) -> bool:
        return (x - self.point[0]) * self.normal[0] + (y - self.point[1]) * self.normal[1] > 0


@dataclass
class Scenario:
    name: str
    lanes: list
    robot: AgentSpec
    human: AgentSpec
    others: list = field(default_factory=list)
    horizon: int = 10
    dt: float = 0.1
    duration: int = 60
    speed_limit: float = SPEED_LIMIT
    courtesy: CourtesyConfig = field(default_factory=CourtesyConfig)
    events: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        self.validate()

    @property
    def agents(self) -> list:
        return [self.robot, self.human] + list(self.others)

    def validate(self):
        if self.horizon < 1:
            raise ScenarioError("horizon must be >= 1")
        if self.dt <= 0 or self.duration < 0:
            raise ScenarioError("dt must be positive and duration nonnegative")
        for lane in self.lanes:
            if lane.width <= max(a.vehicle.width for a in self.agents):
                raise ScenarioError("lane narrower than a car")
        for a in self.agents:
            s, lim = a.state, a.vehicle.limits
            if not 0 <= s.speed <= lim.v_max:
                raise ScenarioError(f"{a.name}: initial speed outside [0, v_max]")
            if not -math.pi < s.heading <= math.pi:
                raise ScenarioError(f"{a.name}: heading not normalized")
            if self.lanes and not self.on_road(s.x, s.y):
                raise ScenarioError(f"{a.name}: initial position off-road")

    def on_road(self, x: float, y: float) -> bool:
        return any(_polyline_distance(lane.centerline, x, y) <= lane.width / 2 + 1e-9
                   for lane in self.lanes)

    def world(self) -> World:
        return World(tuple(
            AgentModel(vehicle=a.vehicle,
                       v_d=self.speed_limit if a.v_d is None else a.v_d,
                       target=tuple(map(tuple, a.target)),
                       lane_width=a.lane_width, weights=a.weights)
            for a in self.agents), self.dt)

    def initial_state(self) -> JointState:
        return JointState(self.robot.state, self.human.state,
                          tuple(a.state for a in self.others))

    def params(self) -> list:
        return [a.vehicle for a in self.agents]

    # serialization

    def to_dict(self) -> dict:
        def agent(a: AgentSpec) -> dict:
            return {
                "name": a.name,
                "state": {"x": a.state.x, "y": a.state.y, "heading": a.state.heading,
                          "speed": a.state.speed},
                "target": [list(map(float, p)) for p in a.target],
                "weights": a.weights.to_dict(),
                "vehicle": a.vehicle.to_dict(),
                "v_d": a.v_d,
                "lane_width": a.lane_width,
                "policy": a.policy,
                "script": [list(map(float, u)) for u in a.script],
            }

        return {
            "name": self.name,
            "lanes": [{"centerline": [list(map(float, p)) for p in l.centerline],
                       "width": l.width} for l in self.lanes],
            "robot": agent(self.robot),
            "human": agent(self.human),
            "others": [agent(a) for a in self.others],
            "horizon": self.horizon,
            "dt": self.dt,
            "duration": self.duration,
            "speed_limit": self.speed_limit,
            "courtesy": {"mode": self.courtesy.mode.value, "lambda": self.courtesy.lambda_c,
                         "softplus_temp": self.courtesy.softplus_temp},
            "events": {k: {"agent": e.agent, "point": list(e.point), "normal": list(e.normal)}
                       for k, e in self.events.items()},
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        def agent(a: dict) -> AgentSpec:
            s = a["state"]
            return AgentSpec(
                name=a["name"],
                state=AgentState(float(s["x"]), float(s["y"]), float(s["heading"]),
                                 float(s["speed"])),
                target=[list(map(float, p)) for p in a["target"]],
                weights=CostWeights.from_dict(a.get("weights", {})),
                vehicle=VehicleParams.from_dict(a.get("vehicle", {})),
                v_d=None if a.get("v_d") is None else float(a["v_d"]),
                lane_width=float(a.get("lane_width", LANE_WIDTH)),
                policy=a.get("policy", "best_response"),
                script=[list(map(float, u)) for u in a.get("script", [])],
            )

        try:
            c = d.get("courtesy", {})
            return cls(
                name=d["name"],
                lanes=[Lane([list(map(float, p)) for p in l["centerline"]],
                            float(l.get("width", LANE_WIDTH))) for l in d.get("lanes", [])],
                robot=agent(d["robot"]),
                human=agent(d["human"]),
                others=[agent(a) for a in d.get("others", [])],
                horizon=int(d.get("horizon", 10)),
                dt=float(d.get("dt", 0.1)),
                duration=int(d.get("duration", 60)),
                speed_limit=float(d.get("speed_limit", SPEED_LIMIT)),
                courtesy=CourtesyConfig(CourtesyMode.parse(c.get("mode", "not_there")),
                                        float(c.get("lambda", 0.0)),
                                        float(c.get("softplus_temp", 0.0))),
                events={k: Event(e["agent"], list(e["point"]), list(e["normal"]))
                        for k, e in d.get("events", {}).items()},
                seed=int(d.get("seed", 0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ScenarioError):
                raise
            raise ScenarioError(f"malformed scenario: {exc}") from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Scenario":
        return cls.from_dict(json.loads(text))

    def with_overrides(self, overrides) -> "Scenario":
        return apply_overrides(self, overrides)


def _polyline_distance(points, x: float, y: float) -> float:
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) == 1:
        return float(math.hypot(x - pts[0, 0], y - pts[0, 1]))
    best = math.inf
    for (ax, ay), (bx, by) in zip(pts[:-1], pts[1:]):
        dx, dy = bx - ax, by - ay
        L2 = dx * dx + dy * dy
        s = 0.0 if L2 == 0 else min(max(((x - ax) * dx + (y - ay) * dy) / L2, 0.0), 1.0)
        best = min(best, math.hypot(x - ax - s * dx, y - ay - s * dy))
    return best


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(scenario: Scenario, overrides) -> Scenario:
    """Apply dotted-path overrides such as ``courtesy.lambda=10``.

    ``overrides`` is a mapping or an iterable of ``"key=value"`` strings;
    values are parsed as JSON when possible.
    """
    if isinstance(overrides, dict):
        items = list(overrides.items())
    else:
        items = []
        for item in overrides:
            if "=" not in item:
                raise ScenarioError(f"override {item!r} is not key=value")
            k, v = item.split("=", 1)
            items.append((k.strip(), _parse_value(v.strip())))
    d = copy.deepcopy(scenario.to_dict())
    for key, value in items:
        node = d
        parts = key.split(".")
        for p in parts[:-1]:
            if isinstance(node, list):
                node = node[int(p)]
            elif p in node:
                node = node[p]
            else:
                raise ScenarioError(f"unknown override key {key!r}")
        last = parts[-1]
        if isinstance(node, list):
            node[int(last)] = value
        elif last in node or isinstance(node, dict) and parts[0] in ("events",):
            node[last] = value
        else:
            raise ScenarioError(f"unknown override key {key!r}")
    return Scenario.from_dict(d)


# built-in scenarios -----------------------------------------------------------

# Calibrated so the selfish robot cuts in tightly without contact and the
# simulated human brakes rather than leaving its lane.
HUMAN_WEIGHTS = CostWeights(theta_g=10.0, theta_d=10.0, theta_acc=0.02, theta_steer=2.0,
                            theta_s=10.0)
ROBOT_WEIGHTS = CostWeights(theta_g=3.0, theta_d=20.0, theta_acc=0.02, theta_steer=0.5,
                            theta_s=25.0)
OBSTACLE = VehicleParams(length=0.45, width=0.20, wheelbase=0.26,
                         limits=ControlLimits(a_min=0.0, a_max=0.0, steer_max=0.0, v_max=0.0))


def _arc(center, radius, a0, a1, n=12):
    ang = np.linspace(a0, a1, n)
    return [[center[0] + radius * math.cos(a), center[1] + radius * math.sin(a)] for a in ang]


def _lane_change(name: str, speed: float) -> Scenario:
    far = 40.0
    lanes = [Lane([[-far, 0.0], [far, 0.0]]), Lane([[-far, LANE_WIDTH], [far, LANE_WIDTH]])]
    target = [[-far, 0.0], [far, 0.0]]
    robot = AgentSpec("robot", AgentState(0.25, LANE_WIDTH, 0.0, speed), target,
                      ROBOT_WEIGHTS, policy="planner")
    human = AgentSpec("human", AgentState(0.0, 0.0, 0.0, speed), target, HUMAN_WEIGHTS,
                      v_d=speed)
    return Scenario(name, lanes, robot, human, duration=50)


def _left_turn() -> Scenario:
    w, far = LANE_WIDTH, 8.0
    h = w / 2
    R = 0.5
    # robot: northbound in the right lane, turns left into the westbound lane
    robot_path = [[h, -far], [h, h - R]] + _arc([h - R, h - R], R, 0.0, math.pi / 2)[1:] \
        + [[-far, h]]
    lanes = [Lane([[h, -far], [h, far]]), Lane([[-h, far], [-h, -far]]),
             Lane([[-far, h], [far, h]]), Lane([[far, -h], [-far, -h]])]
    # a heavier goal weight keeps a yielding robot on its approach lane
    robot = AgentSpec("robot", AgentState(h, -1.3, math.pi / 2, 0.6), robot_path,
                      replace(ROBOT_WEIGHTS, theta_g=30.0), policy="planner")
    human = AgentSpec("human", AgentState(-h, 2.0, -math.pi / 2, 0.85),
                      [[-h, far], [-h, -far]], HUMAN_WEIGHTS, v_d=0.85)
    events = {
        "robot_clear": Event("robot", [-h - 0.3, 0.0], [-1.0, 0.0]),
        "human_clear": Event("human", [0.0, -h - 0.3], [0.0, -1.0]),
    }
    return Scenario("left_turn", lanes, robot, human, duration=70, events=events,
                    courtesy=CourtesyConfig(CourtesyMode.COLLABORATIVE, 0.0))


def _right_turn_human() -> Scenario:
    w, far = LANE_WIDTH, 8.0
    h = w / 2
    R = 0.4
    # human: northbound, turns right into the eastbound lane (y = -h)
    human_path = [[h, -far], [h, -h - R]] + _arc([h + R, -h - R], R, math.pi, math.pi / 2)[1:] \
        + [[far, -h]]
    lanes = [Lane([[h, -far], [h, far]]), Lane([[-h, far], [-h, -far]]),
             Lane([[-far, -h], [far, -h]]), Lane([[far, h], [-far, h]])]
    robot = AgentSpec("robot", AgentState(-0.8, -h, 0.0, 0.8), [[-far, -h], [far, -h]],
                      ROBOT_WEIGHTS, policy="planner")
    human = AgentSpec("human", AgentState(h, -1.1, math.pi / 2, 0.6), human_path,
                      HUMAN_WEIGHTS, v_d=0.6)
    events = {
        "robot_clear": Event("robot", [h + R + 0.2, 0.0], [1.0, 0.0]),
        "human_clear": Event("human", [h + R + 0.2, 0.0], [1.0, 0.0]),
    }
    return Scenario("right_turn_human", lanes, robot, human, duration=60, events=events,
                    courtesy=CourtesyConfig(CourtesyMode.MAINTAIN, 1e3))


def _blocked_overtake(name: str, follower: bool) -> Scenario:
    w, far = LANE_WIDTH, 8.0
    h = w / 2
    lanes = [Lane([[-far, -h], [far, -h]]), Lane([[far, h], [-far, h]])]
    # robot eastbound on y = -h, blocked at x = 0; the goal polyline detours
    # through the opposing lane around the obstacle
    robot_path = [[-far, -h], [-0.9, -h], [-0.45, h], [0.45, h], [0.9, -h], [far, -h]]
    robot = AgentSpec("robot", AgentState(-1.2, -h, 0.0, 0.6), robot_path,
                      replace(ROBOT_WEIGHTS, theta_g=30.0), policy="planner")
    human = AgentSpec("human", AgentState(1.6, h, math.pi, 0.8), [[far, h], [-far, h]],
                      HUMAN_WEIGHTS, v_d=0.8)
    others = [AgentSpec("blockage", AgentState(0.0, -h, 0.0, 0.0), [], CostWeights(theta_g=0.0),
                        vehicle=OBSTACLE, v_d=0.0, policy="static")]
    if follower:
        others.append(AgentSpec("follower", AgentState(2.3, h, math.pi, 0.8),
                                [[far, h], [-far, h]], HUMAN_WEIGHTS, v_d=0.8,
                                policy="responsive"))
    events = {
        "human_clear": Event("human", [-0.6, 0.0], [-1.0, 0.0]),
        "robot_clear": Event("robot", [0.6, 0.0], [1.0, 0.0]),
        "robot_enter": Event("robot", [0.0, 0.0], [0.0, 1.0]),
    }
    return Scenario(name, lanes, robot, human, others, duration=70, events=events,
                    courtesy=CourtesyConfig(CourtesyMode.COLLABORATIVE, 0.0))


BUILTINS = {
    "lane_change_slow": lambda: _lane_change("lane_change_slow", 0.85),
    "lane_change_fast": lambda: _lane_change("lane_change_fast", 0.9),
    "left_turn": _left_turn,
    "right_turn_human": _right_turn_human,
    "blocked_overtake": lambda: _blocked_overtake("blocked_overtake", False),
    "blocked_overtake_3agent": lambda: _blocked_overtake("blocked_overtake_3agent", True),
}


def builtin_scenario(name: str, overrides=()) -> Scenario:
    if name not in BUILTINS:
        raise ScenarioError(f"unknown scenario {name!r}; choose from {sorted(BUILTINS)}")
    scenario = BUILTINS[name]()
    return apply_overrides(scenario, overrides) if overrides else scenario


def load_scenario(ref: str, overrides=()) -> Scenario:
    """Resolve a built-in name or a JSON scenario file."""
    if ref in BUILTINS:
        return builtin_scenario(ref, overrides)
    path = Path(ref)
    if not path.is_file():
        raise ScenarioError(f"unknown scenario {ref!r}")
    scenario = Scenario.from_json(path.read_text())
    return apply_overrides(scenario, overrides) if overrides else scenario
