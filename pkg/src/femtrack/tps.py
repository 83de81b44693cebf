"""3D thin-plate-spline interpolation of scattered displacements.

The deformation is ``phi(q) = c + X q + Y^T s(q)`` with the radial kernel
``k(p) = |p|^2 log|p|`` (0 at the origin). Fitting solves the dense
(m+4)x(m+4) block system with the usual affine side conditions; the model
interpolates the control displacements exactly.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_factor, lu_solve
from scipy.spatial.distance import cdist


class TpsFitError(ValueError):
    """Singular TPS system (duplicate or coplanar control points)."""


def _kernel(r):
    out = np.zeros_like(r)
    pos = r > 0
    out[pos] = r[pos] ** 2 * np.log(r[pos])
    return out


@dataclass
class TpsModel:
    controls: np.ndarray  # (m, 3)
    c: np.ndarray         # (3,)
    x: np.ndarray         # (3, 3)
    y: np.ndarray         # (m, 3)


def tps_fit(controls, displacements):
    """Fit a TPS displacement field through ``m >= 4`` control points.

    Raises TpsFitError for duplicate or coplanar controls (singular system).
    """
    p = np.asarray(controls, dtype=np.float64)
    u = np.asarray(displacements, dtype=np.float64)
    m = len(p)
    if m < 4:
        raise TpsFitError("need at least 4 control points")
    if p.shape != (m, 3) or u.shape != (m, 3):
        raise TpsFitError("controls and displacements must be (m, 3)")

    dists = cdist(p, p)
    off_diag = dists.copy()
    np.fill_diagonal(off_diag, np.inf)
    if off_diag.min() < 1e-10:
        raise TpsFitError("duplicate control points")

    s = _kernel(dists)
    a = np.zeros((m + 4, m + 4))
    a[:m, :m] = s
    a[:m, m] = 1.0
    a[:m, m + 1:] = p
    a[m, :m] = 1.0
    a[m + 1:, :m] = p.T
    rhs = np.zeros((m + 4, 3))
    rhs[:m] = u

    try:
        lu, piv = lu_factor(a)
        sol = lu_solve((lu, piv), rhs)
    except Exception as exc:
        raise TpsFitError(f"singular TPS system: {exc}") from exc
    if not np.isfinite(sol).all():
        raise TpsFitError("singular TPS system (non-finite solution)")
    residual = np.abs(a @ sol - rhs).max()
    scale = max(np.abs(u).max(), 1.0)
    if residual > 1e-6 * scale:
        raise TpsFitError("singular TPS system (coplanar control points?)")

    return TpsModel(controls=p.copy(), c=sol[m].copy(),
                    x=sol[m + 1:].T.copy(), y=sol[:m].copy())


def tps_eval(model, queries):
    """Evaluate the fitted displacement field at one or many points."""
    q = np.asarray(queries, dtype=np.float64)
    single = q.ndim == 1
    q = np.atleast_2d(q)
    s = _kernel(cdist(q, model.controls))
    out = model.c + q @ model.x.T + s @ model.y
    return out[0] if single else out
