"""Trajectory datasets: NGSIM-style CSV ingestion, splitting, synthetic
demonstrations and the MED metric."""
from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace

import numpy as np

from courteous.costs import AgentModel, CostWeights
from courteous.courtesy import CourtesyMode
from courteous.demo import (DEMONSTRATOR, Demonstration, cost_hessian, demo_alt_cost,
                            demo_problem, demo_terms, free_controls, plan_demo)
from courteous.dynamics import ControlLimits, VehicleParams, wrap_angle
from courteous.optim import OptimizerSettings


class DataError(ValueError):
    pass


def med(a, b) -> float:
    """Mean Euclidean distance between two equal-length position sequences."""
    a = np.asarray(a, dtype=float).reshape(-1, 2)
    b = np.asarray(b, dtype=float).reshape(-1, 2)
    if len(a) != len(b) or len(a) == 0:
        raise ValueError("sequences must have equal nonzero length")
    return float(np.mean(np.hypot(*(a - b).T)))


def split_demos(demos, n_train: int = 100, seed: int = 0):
    """Seeded disjoint (train, test) split; test gets everything left over."""
    if not 0 <= n_train <= len(demos):
        raise DataError(f"cannot take {n_train} training demos from {len(demos)}")
    order = np.random.default_rng(seed).permutation(len(demos))
    return [demos[i] for i in order[:n_train]], [demos[i] for i in order[n_train:]]


# dataset ingestion

@dataclass(frozen=True)
class TrajectoryRecord:
    vehicle_id: int
    frame_id: int
    local_x: float
    local_y: float
    speed: float
    lane_id: int


HIGHWAY_VEHICLE = VehicleParams(length=4.5, width=1.8, wheelbase=2.7,
                                limits=ControlLimits(a_min=-8.0, a_max=5.0, steer_max=0.6,
                                                     v_max=40.0))


@dataclass(frozen=True)
class DatasetConfig:
    columns: dict = field(default_factory=lambda: {
        "vehicle_id": "Vehicle_ID", "frame_id": "Frame_ID", "local_x": "Local_X",
        "local_y": "Local_Y", "speed": "v_Vel", "lane_id": "Lane_ID"})
    unit_scale: float = 0.3048  # feet to metres
    source_dt: float = 0.1
    dt: float = 0.1
    before: int = 25  # steps kept before the lane-id change
    after: int = 25
    lane_change: str = "decrease"  # lane-id direction of a left change
    lateral_sign: float = -1.0  # world y = lateral_sign * local_x; world x = local_y
    lane_width: float = 3.7
    context_radius: float = 60.0
    vehicle: VehicleParams = HIGHWAY_VEHICLE
    v_d: float | None = None  # None: the demonstrator's mean window speed
    other_weights: CostWeights = CostWeights(theta_g=1.0, theta_d=1.0, theta_acc=0.01,
                                             theta_steer=1.0, theta_s=1.0)

    def __post_init__(self):
        if self.lane_change not in ("decrease", "increase"):
            raise DataError("lane_change must be 'decrease' or 'increase'")
        ratio = self.dt / self.source_dt
        if self.before < 1 or self.after < 1 or abs(ratio - round(ratio)) > 1e-9 or ratio < 1:
            raise DataError("dt must be a whole multiple of source_dt; windows nonempty")

    @property
    def stride(self) -> int:
        return int(round(self.dt / self.source_dt))


@dataclass
class LoadReport:
    vehicles: int = 0
    events: int = 0
    skipped_gaps: int = 0  # vehicles with missing frames
    skipped_window: int = 0  # windows running past the data
    skipped_no_follower: int = 0
    recon_error: list = field(default_factory=list)  # (max position error, bound) per demo


def read_records(path, config: DatasetConfig = DatasetConfig()) -> list:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return []
        missing = [c for c in config.columns.values() if c not in reader.fieldnames]
        if missing:
            raise DataError(f"missing columns: {missing}")
        col = config.columns
        out = []
        for row in reader:
            rec = TrajectoryRecord(
                int(float(row[col["vehicle_id"]])), int(float(row[col["frame_id"]])),
                float(row[col["local_x"]]), float(row[col["local_y"]]),
                float(row[col["speed"]]), int(float(row[col["lane_id"]])))
            if not all(map(math.isfinite, (rec.local_x, rec.local_y, rec.speed))):
                raise DataError(f"non-finite position for vehicle {rec.vehicle_id}")
            out.append(rec)
    return out


def _tracks(records, report: LoadReport):
    by_vehicle = defaultdict(list)
    for r in records:
        by_vehicle[r.vehicle_id].append(r)
    tracks = {}
    for vid, rows in sorted(by_vehicle.items()):
        rows.sort(key=lambda r: r.frame_id)
        frames = np.array([r.frame_id for r in rows])
        if np.any(np.diff(frames) != 1):
            report.skipped_gaps += 1
            continue
        tracks[vid] = rows
    report.vehicles = len(tracks)
    return tracks


def _world_xy(rows, config: DatasetConfig) -> np.ndarray:
    s = config.unit_scale
    return np.array([[r.local_y * s, config.lateral_sign * r.local_x * s] for r in rows])


def reconstruct_controls(pos: np.ndarray, dt: float, wheelbase: float):
    """States and controls that reproduce sampled positions under forward Euler.

    ``pos`` holds ``L + 2`` samples; returns states ``(L + 1, 4)`` and
    controls ``(L, 2)``. Heading and speed come from successive position
    differences, so the speed column of the data is not used.
    """
    d = np.diff(pos, axis=0)
    speed = np.hypot(d[:, 0], d[:, 1]) / dt
    heading = np.zeros(len(d))
    for k in range(len(d)):
        if speed[k] > 1e-6:
            heading[k] = math.atan2(d[k, 1], d[k, 0])
        else:
            heading[k] = heading[k - 1] if k else 0.0
    states = np.column_stack([pos[:-1], heading, speed])
    accel = np.diff(speed) / dt
    steer = np.zeros(len(accel))
    for k in range(len(accel)):
        dh = wrap_angle(heading[k + 1] - heading[k])
        if speed[k] > 1e-6:
            steer[k] = math.atan(wheelbase * dh / (speed[k] * dt))
    return states, np.column_stack([accel, steer])


def _discretization_bound(pos: np.ndarray) -> float:
    """Half the largest second difference: the local error scale of
    first-order differencing of the samples."""
    if len(pos) < 3:
        return 0.0
    return 0.5 * float(np.max(np.hypot(*np.diff(pos, 2, axis=0).T)))


def load_dataset(path, config: DatasetConfig = DatasetConfig(), report: LoadReport | None = None):
    """Extract one Demonstration per left lane change with a trailing car."""
    report = LoadReport() if report is None else report
    records = read_records(path, config)
    if not records:
        return []
    tracks = _tracks(records, report)
    stride = config.stride
    L = config.before + config.after
    step_sign = -1 if config.lane_change == "decrease" else 1
    frame_index = {vid: {r.frame_id: i for i, r in enumerate(rows)} for vid, rows in tracks.items()}
    demos = []
    for vid, rows in tracks.items():
        lanes = [r.lane_id for r in rows]
        for i in range(1, len(rows)):
            if lanes[i] - lanes[i - 1] != step_sign:
                continue
            report.events += 1
            f = rows[i].frame_id
            frames = [f + stride * (k - config.before) for k in range(L + 2)]
            demo = _extract(vid, frames, lanes[i], tracks, frame_index, config, report)
            if demo is not None:
                demos.append(demo)
    return demos


def _window(vid, frames, tracks, frame_index):
    idx = frame_index[vid]
    if not all(fr in idx for fr in frames):
        return None
    return [tracks[vid][idx[fr]] for fr in frames]


def _extract(vid, frames, target_lane, tracks, frame_index, config, report):
    own = _window(vid, frames, tracks, frame_index)
    if own is None:
        report.skipped_window += 1
        return None
    t0 = config.before  # window index of the change
    f_change = frames[t0]
    own_xy = _world_xy(own, config)
    follower, best, context = None, math.inf, []
    for oid in tracks:
        if oid == vid:
            continue
        w = _window(oid, frames, tracks, frame_index)
        if w is None:
            continue
        xy = _world_xy(w, config)
        ahead = own_xy[t0, 0] - xy[t0, 0]
        if w[t0].lane_id == target_lane and 0 < ahead < best:
            follower, best = oid, ahead
        if np.hypot(*(xy[t0] - own_xy[t0])) <= config.context_radius:
            context.append(oid)
    if follower is None:
        report.skipped_no_follower += 1
        return None
    context = [c for c in context if c != follower]

    dt, wb = config.dt, config.vehicle.wheelbase
    ids = [vid, follower] + context
    states, controls, errors = [], [], []
    for oid in ids:
        pos = _world_xy(_window(oid, frames, tracks, frame_index), config)
        s, u = reconstruct_controls(pos, dt, wb)
        states.append(s)
        controls.append(u)
        if oid == vid:
            errors.append(pos)
    states = np.stack(states, axis=1)  # (L + 1, M, 4)
    lane_y = lambda y: ((-1e4, y), (1e4, y))
    v_d = config.v_d if config.v_d is not None else float(states[:, 0, 3].mean())
    models = [AgentModel(config.vehicle, v_d, lane_y(float(states[-1, 0, 1])),
                         config.lane_width, CostWeights()),
              AgentModel(config.vehicle, float(states[:, 1, 3].mean()),
                         lane_y(float(states[:, 1, 1].mean())), config.lane_width,
                         config.other_weights)]
    models += [AgentModel(config.vehicle, float(states[:, m, 3].mean()), (),
                          config.lane_width, CostWeights(theta_g=0.0))
               for m in range(2, len(ids))]
    L = len(controls[0])
    demo = Demonstration(
        human_controls=controls[0], robot_controls=controls[1], x0=states[0],
        models=tuple(models), dt=dt,
        surrounding=np.array(controls[2:]).reshape(len(ids) - 2, L, 2),
        prev=np.zeros((len(ids), 2)), states=states,
        meta={"vehicle_id": vid, "follower_id": follower, "frame": f_change,
              "context_ids": context})
    rolled = demo.rollout()[:, 0, :2]
    err = float(np.max(np.hypot(*(rolled - states[:, 0, :2]).T)))
    bound = _discretization_bound(errors[0])
    demo.meta["recon_error"] = err
    demo.meta["recon_bound"] = bound
    report.recon_error.append((err, bound))
    return demo


# synthetic demonstrations

# default generating weights; divided by theta_g they read
# (theta_d 10, theta_acc 0.0067, theta_steer 1, theta_s 1.33, lambda_c 0.33)
SYNTHETIC_THETA = CostWeights(theta_g=90.0, theta_d=900.0, theta_acc=0.6, theta_steer=90.0,
                              theta_s=120.0, lambda_c=30.0)

@dataclass(frozen=True)
class SyntheticSpec:
    """Randomized lane changes: the demonstrator starts in the left lane
    beside or slightly ahead of a car cruising in the target lane."""

    family: str = "lane_change"
    length: int = 30
    dt: float = 0.1
    lane_width: float = 0.37
    ahead: tuple = (0.0, 0.5)  # demonstrator's head start over the other car
    speed: tuple = (0.55, 0.7)  # low enough that the v_max clamp stays inactive
    other_speed: tuple = (0.55, 0.7)
    v_d: float = 0.65
    other_weights: CostWeights = CostWeights(theta_g=10.0, theta_d=10.0, theta_acc=0.02,
                                             theta_steer=2.0, theta_s=10.0)
    mode: CourtesyMode = CourtesyMode.MAINTAIN
    # 0 logs the exact optimum; T > 0 adds a draw from N(0, T * H^-1), the
    # Laplace approximation of the max-entropy demonstration density
    temperature: float = 0.0
    goal_smoothing: float = 0.01  # in lane widths, for H only
    planner: OptimizerSettings = field(default_factory=OptimizerSettings)

    def __post_init__(self):
        if self.temperature < 0:
            raise DataError("temperature must be nonnegative")
        if self.family != "lane_change":
            raise DataError(f"unknown synthetic family {self.family!r}")
        if self.length < 2:
            raise DataError("length must be at least 2")


def synthetic_context(spec: SyntheticSpec, rng) -> Demonstration:
    """A demo with zero demonstrator controls: the other car cruises."""
    far = 40.0
    w = spec.lane_width
    target = ((-far, 0.0), (far, 0.0))
    v_o = float(rng.uniform(*spec.other_speed))
    x0 = np.array([[float(rng.uniform(*spec.ahead)), w, 0.0, float(rng.uniform(*spec.speed))],
                   [0.0, 0.0, 0.0, v_o]])
    models = (AgentModel(VehicleParams(), spec.v_d, target, w, CostWeights()),
              AgentModel(VehicleParams(), v_o, target, w, spec.other_weights))
    L = spec.length
    return Demonstration(np.zeros((L, 2)), np.zeros((L, 2)), x0, models, spec.dt)


def generate_synthetic_demos(theta_true: CostWeights, lambda_true: float, count: int,
                             seed: int = 0, spec: SyntheticSpec = SyntheticSpec()):
    """Demonstrations of ``theta_true`` plus ``lambda_true`` courtesy.

    Each window is planned open loop over its whole length against the
    other car's logged (cruising) controls, so with zero temperature every
    demonstration is a local optimum of the generating cost. Returns
    ``(demos, failures)``.
    """
    if count < 1:
        raise DataError("count must be >= 1")
    rng = np.random.default_rng(seed)
    theta = replace(theta_true, lambda_c=float(lambda_true))
    demos, failures = [], 0
    for i in range(count):
        base = synthetic_context(spec, rng)
        models = (replace(base.models[0], weights=theta),) + base.models[1:]
        base = replace(base, models=models)
        try:
            alt = demo_alt_cost(base, spec.mode, None, spec.planner)
            alt_used = alt if lambda_true > 0 else None
            u = plan_demo(base, theta, alt_used, None, spec.planner)
            demo = replace(base, human_controls=u)
            if spec.temperature > 0:
                demo.human_controls = _laplace_draw(demo, theta, alt_used, spec,
                                                    np.random.default_rng([seed, i]))
        except Exception:  # noqa: BLE001 - counted, not fatal
            failures += 1
            continue
        demo.states = demo.rollout()
        demo.meta = {"index": i, "seed": seed, "family": spec.family,
                     f"alt_{spec.mode.value}": alt, "theta_true": theta.to_dict()}
        demos.append(demo)
    return demos, failures


def _laplace_draw(demo: Demonstration, theta, alt, spec: SyntheticSpec, rng) -> np.ndarray:
    kappa = spec.goal_smoothing * demo.models[DEMONSTRATOR].lane_width
    prob = demo_problem(demo, demo_terms(demo, theta, alt), goal_smooth=kappa)
    z = demo.human_controls.ravel().copy()
    idx = np.flatnonzero(free_controls(demo))
    evals, evecs = np.linalg.eigh(cost_hessian(prob, z, idx))
    if evals[0] <= 0:
        raise DataError("generating cost not locally convex at the optimum")
    z[idx] += evecs @ (np.sqrt(spec.temperature / evals) * rng.standard_normal(len(idx)))
    lim = demo.models[DEMONSTRATOR].vehicle.limits
    z = np.clip(z.reshape(-1, 2), lim.lower(), lim.upper())
    return z
