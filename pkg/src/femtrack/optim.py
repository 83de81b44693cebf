"""Gradient-based minimization used by every energy fit in the pipeline.

Thin wrapper around scipy's limited-memory quasi-Newton solver (memory 10,
strong-Wolfe line search, no bounds) with a fixed iteration cap and an
optional finite-difference gradient self-check.
"""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize as _scipy_minimize

MAX_ITERS_DEFAULT = 1000


class GradientMismatchError(ValueError):
    """Analytic gradient disagrees with finite differences."""


@dataclass
class ObjectiveReport:
    energy: float
    iterations: int
    grad_norm: float
    reason: str  # 'gradient' | 'max-iterations' | 'line-search-failure'


def check_gradient(objective, x0, n_probes=8, step=None, seed=0):
    """Max relative error between analytic and central-FD directional derivatives."""
    x0 = np.asarray(x0, dtype=np.float64)
    rng = np.random.default_rng(seed)
    h = step if step is not None else 1e-6 * max(1.0, np.abs(x0).max())
    _, g = objective(x0)
    g = np.asarray(g, dtype=np.float64)
    worst = 0.0
    for _ in range(n_probes):
        d = rng.standard_normal(x0.shape)
        d /= np.linalg.norm(d)
        f_plus, _ = objective(x0 + h * d)
        f_minus, _ = objective(x0 - h * d)
        fd = (f_plus - f_minus) / (2.0 * h)
        an = float(g @ d)
        err = abs(fd - an) / max(1.0, abs(fd), abs(an))
        worst = max(worst, err)
    return worst


def minimize(objective, x0, max_iters=MAX_ITERS_DEFAULT, grad_tol=None,
             ftol=1e-12, verify_gradient=False):
    """Minimize a differentiable objective ``x -> (value, gradient)``.

    Returns ``(x_star, ObjectiveReport)``. The result never has higher
    energy than the starting point. Deterministic for identical inputs.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    f0, g0 = objective(x0)
    g0 = np.asarray(g0, dtype=np.float64)
    if not np.isfinite(f0) or not np.isfinite(g0).all():
        raise ValueError("objective is not finite at the starting point")
    if verify_gradient:
        err = check_gradient(objective, x0)
        if err > 1e-4:
            raise GradientMismatchError(
                f"gradient self-check failed: relative error {err:.3e}")

    if grad_tol is None:
        grad_tol = 1e-7 * max(1.0, abs(f0))

    res = _scipy_minimize(
        objective, x0, jac=True, method="L-BFGS-B",
        options={"maxiter": max_iters, "maxcor": 10,
                 "ftol": ftol, "gtol": grad_tol},
    )

    x_star, f_star = res.x, float(res.fun)
    grad_norm = float(np.abs(np.asarray(res.jac)).max()) if res.jac is not None \
        else float("nan")
    if f_star > f0:
        x_star, f_star, grad_norm = x0, float(f0), float(np.abs(g0).max())

    if res.status == 1:
        reason = "max-iterations"
    elif res.status == 0:
        reason = "gradient"
    else:
        reason = "line-search-failure"
    report = ObjectiveReport(energy=f_star, iterations=int(res.nit),
                             grad_norm=grad_norm, reason=reason)
    return x_star, report
