"""Linear constant-strain tetrahedral elasticity.

The global stiffness matrix is assembled as ``K = lam * K_lam + mu * K_mu``
with material-independent parts, which makes material estimation from
displacement/force pairs a two-unknown linear least squares.
"""

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .mesh import tet_volumes

logger = logging.getLogger(__name__)

_E_FLOOR = 1e-12
_NU_MAX = 0.49

# isotropic elasticity in Voigt order [xx, yy, zz, xy, yz, zx], gamma shears
_C_LAM = np.zeros((6, 6))
_C_LAM[:3, :3] = 1.0
_C_MU = np.diag([2.0, 2.0, 2.0, 1.0, 1.0, 1.0])


class MaterialEstimationError(ValueError):
    """Degenerate least-squares system for the elasticity parameters."""


class SolveError(ValueError):
    """Singular constrained system (insufficient fixed nodes)."""


@dataclass
class Material:
    """Young's modulus and Poisson ratio (scale-normalized, not physical)."""
    young: float
    poisson: float

    def __post_init__(self):
        if self.young <= 0:
            raise ValueError("Young's modulus must be positive")
        if not 0.0 <= self.poisson <= _NU_MAX:
            raise ValueError(f"Poisson ratio must be in [0, {_NU_MAX}]")

    def lame(self):
        lam = (self.young * self.poisson
               / ((1.0 + self.poisson) * (1.0 - 2.0 * self.poisson)))
        mu = self.young / (2.0 * (1.0 + self.poisson))
        return lam, mu

    @classmethod
    def from_lame(cls, lam, mu, clamp=True):
        denom = lam + mu
        if not np.isfinite(lam) or not np.isfinite(mu) or abs(denom) < 1e-300:
            raise MaterialEstimationError("non-finite or degenerate Lame pair")
        young = mu * (3.0 * lam + 2.0 * mu) / denom
        poisson = lam / (2.0 * denom)
        if young <= 0:
            # a non-positive stiffness fit is unusable downstream
            raise MaterialEstimationError(
                f"estimated Young's modulus not positive ({young:.3g})")
        if clamp:
            poisson = float(np.clip(poisson, 0.0, _NU_MAX))
        return cls(young=float(young), poisson=poisson)


def element_shape_gradients(nodes, tets):
    """Barycentric shape-function gradients (k, 4, 3) and volumes (k,)."""
    v = nodes[tets]
    m = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0], v[:, 3] - v[:, 0]],
                 axis=1)  # rows are edge vectors
    minv = np.linalg.inv(m)
    grads = np.empty((len(tets), 4, 3))
    grads[:, 1:, :] = np.transpose(minv, (0, 2, 1))
    grads[:, 0, :] = -grads[:, 1:, :].sum(axis=1)
    return grads, tet_volumes(nodes, tets)


def _strain_matrices(grads):
    k = len(grads)
    b = np.zeros((k, 6, 12))
    for a in range(4):
        gx, gy, gz = grads[:, a, 0], grads[:, a, 1], grads[:, a, 2]
        col = 3 * a
        b[:, 0, col] = gx
        b[:, 1, col + 1] = gy
        b[:, 2, col + 2] = gz
        b[:, 3, col] = gy
        b[:, 3, col + 1] = gx
        b[:, 4, col + 1] = gz
        b[:, 4, col + 2] = gy
        b[:, 5, col] = gz
        b[:, 5, col + 2] = gx
    return b


def assemble_split(tet):
    """Material-independent stiffness parts (K_lam, K_mu) as CSR matrices."""
    grads, vols = element_shape_gradients(tet.nodes, tet.tets)
    b = _strain_matrices(grads)

    def reduce_c(c):
        kel = np.einsum("kpi,pq,kqj->kij", b, c, b) * vols[:, None, None]
        dofs = (3 * tet.tets[:, :, None] + np.arange(3)).reshape(len(tet.tets), 12)
        rows = np.repeat(dofs, 12, axis=1).ravel()
        cols = np.tile(dofs, (1, 12)).ravel()
        n = 3 * len(tet.nodes)
        return sparse.coo_matrix((kel.ravel(), (rows, cols)),
                                 shape=(n, n)).tocsr()

    return reduce_c(_C_LAM), reduce_c(_C_MU)


class StiffnessSystem:
    """Assembled K(E, nu) with its Lame decomposition and a solver cache."""

    def __init__(self, tet, material, split=None):
        self.tet = tet
        self.material = material
        self.k_lam, self.k_mu = split if split is not None else assemble_split(tet)
        lam, mu = material.lame()
        self.matrix = (lam * self.k_lam + mu * self.k_mu).tocsr()
        self._cache = {}

    @property
    def n_dofs(self):
        return self.matrix.shape[0]

    def solver_for(self, fixed_idx):
        """Factorization of the free-free block, cached by fixed-node set."""
        key = tuple(sorted(int(i) for i in fixed_idx))
        if key not in self._cache:
            fixed_dofs = (3 * np.asarray(key, dtype=np.int64)[:, None]
                          + np.arange(3)).ravel()
            free = np.ones(self.n_dofs, dtype=bool)
            free[fixed_dofs] = False
            free_dofs = np.flatnonzero(free)
            kff = self.matrix[free_dofs][:, free_dofs].tocsc()
            kfc = self.matrix[free_dofs][:, fixed_dofs].tocsr()
            factor = splu(kff) if kff.shape[0] else None
            self._cache[key] = (factor, free_dofs, fixed_dofs, kff)
        return self._cache[key]


def assemble_stiffness(tet, material, split=None):
    return StiffnessSystem(tet, material, split=split)


def compute_forces(system, u):
    """Mode A2: forces from displacements, f = K u."""
    u = np.asarray(u, dtype=np.float64)
    shape = u.shape
    f = system.matrix @ u.reshape(-1)
    return f.reshape(shape)


def solve_displacements(system, fixed, forces=None):
    """Mode A3: displacements under fixed nodes and prescribed free forces.

    ``fixed`` maps node index -> (3,) displacement (a dict or an
    ``(indices, values)`` pair). ``forces`` is a full (m, 3) array; entries
    at fixed nodes are ignored and missing forces default to zero.
    """
    if isinstance(fixed, dict):
        fixed_idx = np.array(sorted(fixed), dtype=np.int64)
        fixed_u = np.array([fixed[i] for i in fixed_idx], dtype=np.float64)
    else:
        fixed_idx, fixed_u = fixed
        fixed_idx = np.asarray(fixed_idx, dtype=np.int64)
        order = np.argsort(fixed_idx)
        fixed_idx = fixed_idx[order]
        fixed_u = np.asarray(fixed_u, dtype=np.float64)[order]
    if len(fixed_idx) == 0:
        raise SolveError("need at least one fixed node")

    m = system.n_dofs // 3
    f = np.zeros((m, 3)) if forces is None else np.asarray(forces, dtype=np.float64)

    factor, free_dofs, fixed_dofs, kff = system.solver_for(fixed_idx)
    u = np.zeros(system.n_dofs)
    u[fixed_dofs] = fixed_u.ravel()
    if factor is None:  # everything fixed
        return u.reshape(-1, 3)

    kfc = system.matrix[free_dofs][:, fixed_dofs]
    rhs = f.reshape(-1)[free_dofs] - kfc @ u[fixed_dofs]
    try:
        uf = factor.solve(rhs)
    except RuntimeError as exc:
        raise SolveError(f"singular constrained system: {exc}") from exc
    if not np.isfinite(uf).all():
        raise SolveError("singular constrained system (non-finite solution)")
    residual = np.abs(kff @ uf - rhs).max()
    scale = max(np.abs(rhs).max(), np.abs(system.matrix.data).max()
                * max(np.abs(uf).max(), 1e-300))
    if residual > 1e-6 * max(scale, 1e-300):
        raise SolveError("singular constrained system (insufficient constraints)")
    u[free_dofs] = uf
    return u.reshape(-1, 3)


def estimate_material(tet, u, known_forces, split=None, cond_limit=1e10):
    """Mode A1: least-squares fit of (E, nu) from displacement/force rows.

    ``known_forces`` maps node index -> (3,) force (dict or
    ``(indices, values)`` pair); ``u`` is the full (m, 3) displacement.
    """
    if isinstance(known_forces, dict):
        idx = np.array(sorted(known_forces), dtype=np.int64)
        f = np.array([known_forces[i] for i in idx], dtype=np.float64)
    else:
        idx, f = known_forces
        idx = np.asarray(idx, dtype=np.int64)
        f = np.asarray(f, dtype=np.float64)
    if len(idx) < 2:
        raise MaterialEstimationError("need at least 2 known-force nodes")

    k_lam, k_mu = split if split is not None else assemble_split(tet)
    u_flat = np.asarray(u, dtype=np.float64).reshape(-1)
    dofs = (3 * idx[:, None] + np.arange(3)).ravel()
    a_lam = (k_lam @ u_flat)[dofs]
    a_mu = (k_mu @ u_flat)[dofs]
    design = np.column_stack([a_lam, a_mu])

    sv = np.linalg.svd(design, compute_uv=False)
    scale = ((np.abs(k_lam.data).max() + np.abs(k_mu.data).max())
             * max(np.abs(u_flat).max(), 1e-300))
    if sv[0] < 1e-12 * scale or sv[-1] / max(sv[0], 1e-300) < 1.0 / cond_limit:
        raise MaterialEstimationError(
            "rank-deficient material estimation (displacement in rigid null space?)")
    (lam, mu), *_ = np.linalg.lstsq(design, f.reshape(-1), rcond=None)
    return Material.from_lame(lam, mu)
