"""Max-entropy IRL over continuous control sequences (Laplace approximation).

The cost of a demonstration is linear in the weights,
``C(u) = sum_j theta_j * Phi_j(u)``, so per demonstration we precompute each
feature's value, control gradient and control Hessian once. The likelihood
and its weight gradient are then closed-form linear algebra.

With ``g`` and ``H`` the gradient and Hessian of ``C`` at the demonstration
and ``A = H + eps*I``, the second-order expansion of ``C`` integrates to

    log P = -1/2 g' A^-1 g + 1/2 log det A - dim/2 log(2 pi)

(the ``"laplace"`` likelihood). ``"literal"`` replaces the first term with
``-C`` and drops the normalizer ``C(u*)``; both agree when ``g = 0`` and
``C = 0``.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from courteous.costs import ZERO_WEIGHTS, CostWeights, build_problem, cost_term
from courteous.courtesy import CourtesyMode
from courteous.data import med
from courteous.demo import (DEMONSTRATOR, INTERACTING, Demonstration, cost_hessian,
                            demo_alt_cost, free_controls, plan_demo)
from courteous.optim import OptimizerSettings

# weight names in kernel feature order, then the courtesy weight
PARAMS = ("theta_d", "theta_acc", "theta_steer", "theta_g", "theta_s", "lambda_c")
LOG_2PI = math.log(2.0 * math.pi)


class IrlError(ValueError):
    pass


class NotPositiveDefinite(IrlError):
    pass


@dataclass(frozen=True)
class IrlConfig:
    use_courtesy_feature: bool = True
    courtesy_mode: CourtesyMode = CourtesyMode.MAINTAIN
    hessian_jitter: float = 1e-6  # relative: eps = jitter * (1 + |tr H| / dim)
    jitter_growth: float = 10.0
    jitter_retries: int = 3
    fd_step: float = 1e-5  # Hessian differencing step
    # goal-distance smoothing, in lane widths, for the curvature only; the
    # exact distance has a kink on the centerline where optimal demos sit
    goal_smoothing: float = 0.01
    bound_tol: float = 1e-6  # controls this close to a limit leave the Gaussian
    likelihood: str = "laplace"  # or "literal"
    max_epochs: int = 1000  # quasi-Newton iterations per round
    patience: int = 20  # stop after this many non-improving iterations
    grad_tol: float = 1e-8
    rounds: int = 3  # readmission passes for demos indefinite at the start
    anchor: str = "theta_g"
    hold_anchor: bool = False  # keep the anchor fixed while fitting
    init: CostWeights | None = None
    other_weights: CostWeights | None = None  # interacting car; None uses the demo's model
    planner: OptimizerSettings = field(default_factory=OptimizerSettings)
    workers: int = 1

    def __post_init__(self):
        if not self.hessian_jitter > 0:
            raise IrlError("hessian_jitter must be positive")
        if self.likelihood not in ("laplace", "literal"):
            raise IrlError(f"unknown likelihood {self.likelihood!r}")
        if self.anchor not in PARAMS[:5]:
            raise IrlError(f"anchor must be one of {PARAMS[:5]}")
        object.__setattr__(self, "courtesy_mode", CourtesyMode.parse(self.courtesy_mode))

    @property
    def n_params(self) -> int:
        return 6 if self.use_courtesy_feature else 5


def theta_vector(theta: CostWeights, n: int = 6) -> np.ndarray:
    return np.array([getattr(theta, p) for p in PARAMS[:n]])


def theta_weights(vec) -> CostWeights:
    return CostWeights(**{p: float(max(v, 0.0)) for p, v in zip(PARAMS, vec)})


def save_weights(theta: CostWeights, path) -> None:
    """Write weights as a flat JSON object, loadable as scenario agent weights."""
    with open(path, "w") as fh:
        json.dump(theta.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_weights(path) -> CostWeights:
    with open(path) as fh:
        d = json.load(fh)
    try:
        return CostWeights.from_dict(d.get("weights", d))
    except (TypeError, ValueError) as exc:
        raise IrlError(f"{path}: not a weights file ({exc})") from exc


@dataclass
class DemoStats:
    """Per-feature value, gradient and Hessian over the free controls.

    Free controls are those strictly inside their limits that influence at
    least one feature.
    """

    phi: np.ndarray  # (K,)
    grads: np.ndarray  # (K, dim)
    hessians: np.ndarray  # (K, dim, dim), symmetric
    alt: float | None
    free: np.ndarray  # boolean mask over the 2L controls

    @property
    def dim(self) -> int:
        return int(self.free.sum())


def _feature_problems(demo: Demonstration, config: IrlConfig, alt):
    world = demo.world()
    probs = []
    for j in range(5):
        term = cost_term(world, DEMONSTRATOR, ZERO_WEIGHTS, demo.prev[DEMONSTRATOR])
        term.weights = np.eye(5)[j]
        probs.append(term)
    if config.use_courtesy_feature:
        w = world.agents[INTERACTING].weights if config.other_weights is None \
            else config.other_weights
        probs.append(cost_term(world, INTERACTING, w, demo.prev[INTERACTING],
                               offset=alt, hinge=True))
    U = demo.controls()
    kappa = config.goal_smoothing * world.agents[DEMONSTRATOR].lane_width
    return [build_problem(world, demo.x0, U, [DEMONSTRATOR], [t], goal_smooth=kappa)
            for t in probs]


def courtesy_alt(demo: Demonstration, config: IrlConfig) -> float:
    """Alternative cost for the courtesy feature, cached in ``demo.meta``."""
    key = f"alt_{config.courtesy_mode.value}"
    if config.other_weights is None and key in demo.meta:
        return float(demo.meta[key])
    alt = demo_alt_cost(demo, config.courtesy_mode, config.other_weights, config.planner)
    if config.other_weights is None:
        demo.meta[key] = alt
    return alt


def precompute(demo: Demonstration, config: IrlConfig) -> DemoStats:
    alt = courtesy_alt(demo, config) if config.use_courtesy_feature else None
    z = demo.human_controls.ravel()
    free = free_controls(demo, config.bound_tol)
    idx = np.flatnonzero(free)
    phi, grads, hess = [], [], []
    for prob in _feature_problems(demo, config, alt):
        v, g = prob.value_and_grad(z)
        phi.append(v)
        grads.append(g[idx])
        hess.append(cost_hessian(prob, z, idx, config.fd_step))
    grads, hess = np.array(grads), np.array(hess)
    # controls with no effect on any feature (e.g. throttle while the speed
    # is clamped at v_max) carry no curvature either; leave them out
    live = (np.abs(grads).max(axis=0) > 0) | (np.abs(hess).max(axis=(0, 1)) > 1e-9)
    free[idx[~live]] = False
    return DemoStats(np.array(phi), grads[:, live], hess[:, live][:, :, live], alt, free)


def precompute_all(demos, config: IrlConfig) -> list:
    """Ordered per-demo statistics; parallel when ``config.workers`` > 1."""
    if config.workers > 1 and len(demos) > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            return list(pool.map(precompute, demos, [config] * len(demos)))
    return [precompute(d, config) for d in demos]


def log_likelihood(theta_vec, stats: DemoStats, config: IrlConfig, with_grad=False):
    """``log P`` (and its gradient over the weight vector) for one demo.

    Raises ``NotPositiveDefinite`` if ``H + eps*I`` stays indefinite after
    the jitter retries.
    """
    th = np.asarray(theta_vec, dtype=float)
    dim = stats.dim
    g = th @ stats.grads
    H = np.tensordot(th, stats.hessians, axes=1)
    trH = np.trace(H)
    base = config.hessian_jitter * (1.0 + abs(trH) / max(dim, 1))
    mult = 1.0
    for _ in range(config.jitter_retries + 1):
        eps = mult * base
        A = H + eps * np.eye(dim)
        try:
            Lc = np.linalg.cholesky(A)
            break
        except np.linalg.LinAlgError:
            mult *= config.jitter_growth
    else:
        raise NotPositiveDefinite("Hessian not positive definite after jitter")
    logdet = 2.0 * np.log(np.diag(Lc)).sum()
    Ainv = np.linalg.inv(A)
    x = Ainv @ g
    if config.likelihood == "laplace":
        lp = -0.5 * g @ x + 0.5 * logdet - 0.5 * dim * LOG_2PI
    else:
        lp = -float(th @ stats.phi) + 0.5 * logdet - 0.5 * dim * LOG_2PI
    if not with_grad:
        return float(lp)
    # d eps / d theta_j through the trace-scaled jitter
    deps = mult * config.hessian_jitter * np.sign(trH) * np.trace(
        stats.hessians, axis1=1, axis2=2) / max(dim, 1)
    tr_term = np.einsum("ab,jab->j", Ainv, stats.hessians) + deps * np.trace(Ainv)
    if config.likelihood == "laplace":
        quad = np.einsum("a,jab,b->j", x, stats.hessians, x) + deps * (x @ x)
        grad = -stats.grads @ x + 0.5 * quad + 0.5 * tr_term
    else:
        grad = -stats.phi + 0.5 * tr_term
    return float(lp), grad


def demo_log_likelihood(theta: CostWeights, demo: Demonstration,
                        config: IrlConfig = IrlConfig()) -> float:
    stats = precompute(demo, config)
    return log_likelihood(theta_vector(theta, config.n_params), stats, config)


def total_log_likelihood(theta_vec, stats_list, config: IrlConfig, with_grad=False):
    """Ordered sum over demos; indefinite ones are skipped and counted."""
    total, grad, skipped = 0.0, np.zeros(len(theta_vec)), []
    for i, s in enumerate(stats_list):
        try:
            r = log_likelihood(theta_vec, s, config, with_grad)
        except NotPositiveDefinite:
            skipped.append(i)
            continue
        if with_grad:
            total += r[0]
            grad += r[1]
        else:
            total += r
    return (total, grad, skipped) if with_grad else (total, skipped)


@dataclass
class FitResult:
    weights: CostWeights
    curve: list  # mean negative log-likelihood per iteration
    epochs: int
    early_stopped: bool
    skipped: int  # demos indefinite at the returned weights
    used: int
    scale: float = 1.0  # fitted anchor value before rescaling to 1

    @property
    def raw_vector(self) -> np.ndarray:
        """Fitted weights at the scale the likelihood was maximized."""
        return theta_vector(self.weights) * self.scale

    def __iter__(self):
        return iter((self.weights, self.curve))


def default_init(config: IrlConfig) -> CostWeights:
    return CostWeights(theta_g=1.0, theta_d=1.0, theta_acc=1.0, theta_steer=1.0, theta_s=1.0,
                       lambda_c=1.0 if config.use_courtesy_feature else 0.0)


class _Stale(Exception):
    pass


def _ascend(theta, kept, config, free, curve):
    """Bounded L-BFGS on the mean negative log-likelihood over ``kept``."""
    n = len(kept)
    fixed = theta.copy()
    best = [math.inf, theta.copy(), 0]

    def full(x):
        t = fixed.copy()
        t[free] = x
        return t

    def fg(x):
        lp, g, bad = total_log_likelihood(full(x), kept, config, with_grad=True)
        if bad:  # outside the region where every kept demo is usable
            return 1e300, np.zeros(x.size)
        return -lp / n, -g[free] / n

    def record(intermediate_result):
        res = intermediate_result
        v = float(res.fun)
        curve.append(v)
        if v < best[0] - 1e-10 * max(1.0, abs(best[0])):
            best[:] = [v, full(res.x), 0]
        else:
            best[2] += 1
            if best[2] >= config.patience:
                raise StopIteration

    v0, _ = fg(theta[free])
    curve.append(v0)
    best[0] = v0
    res = minimize(fg, theta[free], jac=True, method="L-BFGS-B",
                   bounds=[(0.0, None)] * int(free.sum()), callback=record,
                   options={"maxiter": config.max_epochs, "gtol": config.grad_tol,
                            "ftol": 1e-13})
    early = best[2] >= config.patience
    if res.fun < best[0]:
        best[:2] = [res.fun, full(res.x)]
    return best[1], early


def fit(demos, config: IrlConfig = IrlConfig(), stats=None) -> FitResult:
    """Maximize the summed log-likelihood over nonnegative weights.

    The ascent is a bound-projected quasi-Newton method (L-BFGS-B) using the
    analytic weight gradient. Demos indefinite at the start are left out;
    after convergence any that became usable are readmitted and the ascent
    resumes, up to ``config.rounds`` times. The result is rescaled so the
    anchor weight is 1; with ``hold_anchor`` the anchor also stays fixed
    during the ascent, which bounds the scale when demonstrations are
    noiseless optima.
    """
    stats = precompute_all(demos, config) if stats is None else stats
    K = config.n_params
    theta = theta_vector(config.init or default_init(config), K)
    anchor = PARAMS.index(config.anchor)
    if theta[anchor] <= 0:
        raise IrlError("anchor weight must start positive")
    free = np.ones(K, dtype=bool)
    free[anchor] = not config.hold_anchor
    curve, early, epochs = [], False, 0
    _, bad = total_log_likelihood(theta, stats, config)
    for _ in range(config.rounds):
        kept = [s for i, s in enumerate(stats) if i not in set(bad)]
        if not kept:
            raise IrlError("no usable demonstrations")
        start = len(curve)
        theta, early = _ascend(theta, kept, config, free, curve)
        epochs += len(curve) - start - 1
        _, now = total_log_likelihood(theta, stats, config)
        if not set(bad) - set(now):  # nothing to readmit
            break
        bad = now
    if theta[anchor] <= 0:
        raise IrlError("anchor weight collapsed to zero")
    scale = float(theta[anchor])
    return FitResult(theta_weights(theta / scale), curve, epochs, early, len(bad),
                     len(stats) - len(bad), scale)


def training_loss(result: FitResult, stats, config: IrlConfig, subset=None) -> float:
    """Mean negative log-likelihood of the fitted weights over ``subset``
    (default: every demo usable at those weights)."""
    theta = result.raw_vector[:config.n_params]
    chosen = range(len(stats)) if subset is None else subset
    total, bad = total_log_likelihood(theta, [stats[i] for i in chosen], config)
    used = len(list(chosen)) - len(bad)
    if used == 0:
        raise IrlError("no usable demonstrations in subset")
    return -total / used


def usable(theta_vec, stats, config: IrlConfig) -> list:
    """Indices of demos whose Gaussian is proper at ``theta_vec``."""
    _, bad = total_log_likelihood(theta_vec, stats, config)
    return [i for i in range(len(stats)) if i not in set(bad)]


@dataclass
class EvalRow:
    index: int
    med: float
    gap_error: float  # mean |planned - demonstrated| following gap
    min_gap_planned: float
    min_gap_demo: float
    ok: bool
    message: str = ""


@dataclass
class EvalResult:
    rows: list
    gaps: list  # (planned, demonstrated) following-gap series per ok row

    @property
    def mean_med(self) -> float:
        meds = [r.med for r in self.rows if r.ok]
        return float(np.mean(meds)) if meds else math.nan

    @property
    def failed(self) -> int:
        return sum(not r.ok for r in self.rows)


def following_gap(states: np.ndarray, demo: Demonstration) -> np.ndarray:
    """Bumper gap ahead of the interacting car, along its heading."""
    d, o = states[:, DEMONSTRATOR], states[:, INTERACTING]
    dl = np.cos(o[:, 2]) * (d[:, 0] - o[:, 0]) + np.sin(o[:, 2]) * (d[:, 1] - o[:, 1])
    length = 0.5 * (demo.models[DEMONSTRATOR].vehicle.length
                    + demo.models[INTERACTING].vehicle.length)
    return dl - length


def plan_with(theta: CostWeights, demo: Demonstration, config: IrlConfig) -> np.ndarray:
    alt = None
    if theta.lambda_c > 0:
        alt = courtesy_alt(demo, config)
    return plan_demo(demo, theta, alt, config.other_weights, config.planner)


def _evaluate_one(args):
    i, theta, demo, config = args
    try:
        u = plan_with(theta, demo, config)
    except Exception as exc:  # noqa: BLE001 - reported per row
        return EvalRow(i, math.nan, math.nan, math.nan, math.nan, False, str(exc)), None
    planned = demo.rollout(u)
    logged = demo.states if demo.states is not None else demo.rollout()
    gp, gd = following_gap(planned, demo), following_gap(logged, demo)
    row = EvalRow(i, med(planned[1:, DEMONSTRATOR, :2], logged[1:, DEMONSTRATOR, :2]),
                  float(np.mean(np.abs(gp - gd))), float(gp.min()), float(gd.min()), True)
    return row, (gp, gd)


def evaluate(theta: CostWeights, test_demos, config: IrlConfig = IrlConfig()) -> EvalResult:
    """Plan each test window with ``theta`` and compare against the demonstration."""
    jobs = [(i, theta, d, config) for i, d in enumerate(test_demos)]
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            out = list(pool.map(_evaluate_one, jobs))
    else:
        out = [_evaluate_one(j) for j in jobs]
    return EvalResult([r for r, _ in out], [g for _, g in out if g is not None])
