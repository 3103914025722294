"""Box-constrained multi-start optimizer for fixed-horizon control sequences."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from courteous.dynamics import ControlLimits


class DegenerateObjective(ValueError):
    pass


@dataclass(frozen=True)
class OptimizerSettings:
    max_iters: int = 200
    grad_tol: float = 1e-5
    fd_step: float = 1e-5
    restarts: int = 3
    seed: int = 0
    perturb: float = 0.1  # random restart spread, as a fraction of the box width

    def __post_init__(self):
        if self.max_iters < 1 or self.restarts < 1 or not self.grad_tol > 0:
            raise ValueError("invalid optimizer settings")


def fd_gradient(f, z, h):
    z = np.asarray(z, dtype=float)
    g = np.empty_like(z)
    for i in range(z.size):
        e = np.zeros_like(z)
        e[i] = h
        g[i] = (f(z + e) - f(z - e)) / (2.0 * h)
    return g


def _bounds(limits, shape):
    if isinstance(limits, ControlLimits):
        lo = np.broadcast_to(limits.lower(), shape)
        hi = np.broadcast_to(limits.upper(), shape)
    else:
        lo, hi = (np.broadcast_to(np.asarray(b, dtype=float), shape) for b in limits)
    return lo.ravel(), hi.ravel()


def optimize_controls(objective, init, limits, settings: OptimizerSettings = OptimizerSettings(),
                      gradient=None, extra_inits=(), rng=None, value_and_grad=False):
    """Minimize ``objective`` over a control sequence inside a box.

    ``objective`` takes an array shaped like ``init``. ``gradient`` may
    return the gradient alone or, if ``value_and_grad`` is true, a
    ``(value, gradient)`` pair. L-BFGS-B runs from
    ``settings.restarts`` starts (``init``, zero controls, then random
    perturbations of ``init``) plus any ``extra_inits``. Returns the best
    ``(sequence, value)``; ties go to the smaller norm. The result never
    scores worse than ``init`` itself.
    """
    init = np.asarray(init, dtype=float)
    shape = init.shape
    lo, hi = _bounds(limits, shape)
    f = lambda z: float(objective(z.reshape(shape)))
    f0 = f(init.ravel())
    if not np.isfinite(f0):
        raise DegenerateObjective("degenerate objective")
    if gradient is None:
        fg = lambda z: (f(z), fd_gradient(f, z, settings.fd_step))
    elif value_and_grad:
        def fg(z):
            v, g = gradient(z.reshape(shape))
            return float(v), np.asarray(g, dtype=float).ravel()
    else:
        fg = lambda z: (f(z), np.asarray(gradient(z.reshape(shape)), dtype=float).ravel())
    if rng is None:
        rng = np.random.default_rng(settings.seed)

    starts = [np.clip(init.ravel(), lo, hi)]
    if settings.restarts > 1:
        starts.append(np.clip(np.zeros(init.size), lo, hi))
    for _ in range(settings.restarts - 2):
        noise = rng.normal(size=init.size) * settings.perturb * (hi - lo)
        starts.append(np.clip(init.ravel() + noise, lo, hi))
    starts += [np.clip(np.asarray(e, dtype=float).ravel(), lo, hi) for e in extra_inits]

    best_z, best_v = init.ravel().copy(), f0
    seen = []
    for z0 in starts:
        if any(np.array_equal(z0, s) for s in seen):
            continue
        seen.append(z0)
        res = minimize(fg, z0, jac=True, method="L-BFGS-B",
                       bounds=list(zip(lo, hi)),
                       options={"maxiter": settings.max_iters, "gtol": settings.grad_tol})
        z, v = np.clip(res.x, lo, hi), f(np.clip(res.x, lo, hi))
        if not np.isfinite(v):
            continue
        tie = abs(v - best_v) <= 1e-12 * max(1.0, abs(best_v))
        if (v < best_v and not tie) or (tie and np.linalg.norm(z) < np.linalg.norm(best_z)):
            best_z, best_v = z, v
    return best_z.reshape(shape), best_v
