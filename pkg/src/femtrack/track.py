"""Registration energies and their schedules.

Rigid alignment fits a 7-DOF similarity by point-to-plane ICP. Non-rigid
tracking minimizes ``w_data * E_data + w_sm * E_sm`` per hierarchy level,
relaxing the smoothness weight (100, halved per converged stage, floor 20)
and refreshing correspondences exactly at the weight changes. After the FEM
step, the same parameterization is re-fit against point targets for the
unobserved vertices only.
"""

import logging
from dataclasses import dataclass

import numpy as np

from . import optim
from .correspond import attach_kdtree, build_correspondence
from .geom.metrics import geodesic_neighborhoods
from .xform import (DeformField, SimilarityTransform, average_transforms,
                    deform_points, rotation_jacobians, rotation_matrices,
                    rotvec_jacobian, spherical_from_axis, wrap_angle)

logger = logging.getLogger(__name__)


class DegenerateFitError(ValueError):
    """Too few valid correspondences to constrain the fit."""


@dataclass
class TrackConfig:
    w_data: float = 1.0
    w_sm_init: float = 100.0
    w_sm_floor: float = 20.0
    rel_stop: float = 1e-4        # stop when relative energy change drops below
    relax_trigger: float = 5e-3   # halve w_sm when a stage improves less than this
    d: float = 5.0                # distance rejection at d * r
    alpha_deg: float = 60.0       # normal-angle rejection
    s_sm: float = 1.5             # smoothing radius in units of r
    post_process: bool = True
    post_ratio: float = 2.0
    refit_w_data: float = 1.0
    refit_w_sm: float = 20.0
    max_inner_iters: int = 1000
    inner_ftol: float = 1e-10
    rigid_max_rounds: int = 50
    workers: int = -1

    def __post_init__(self):
        if min(self.w_data, self.w_sm_init, self.w_sm_floor,
               self.refit_w_data, self.refit_w_sm) <= 0:
            raise ValueError("energy weights must be positive")
        if not 0.0 < self.alpha_deg <= 90.0:
            raise ValueError("alpha must be in (0, 90] degrees")
        if self.rel_stop <= 0 or self.relax_trigger <= 0:
            raise ValueError("stopping thresholds must be positive")


# ----------------------------------------------------------------------
# axis charts: re-anchored spherical parameterization per optimizer stage

def _reference_tangents(mesh):
    """Mesh-intrinsic per-vertex direction (first one-ring edge)."""
    first = mesh._ring_indices[mesh._ring_indptr[:-1]]
    e = mesh.vertices[first] - mesh.vertices
    return e / np.maximum(np.linalg.norm(e, axis=1, keepdims=True), 1e-300)


def _build_charts(axes, ref_dirs):
    """Orthonormal frames Q with Q[:, 0] = axis; chart starts on the equator."""
    x = axes / np.linalg.norm(axes, axis=1, keepdims=True)
    t = ref_dirs - np.einsum("ni,ni->n", ref_dirs, x)[:, None] * x
    nrm = np.linalg.norm(t, axis=1)
    bad = nrm < 1e-8
    if bad.any():
        # reference parallel to axis: fall back to the least-aligned basis vector
        basis = np.eye(3)[np.argmin(np.abs(x[bad]), axis=1)]
        t2 = basis - np.einsum("ni,ni->n", basis, x[bad])[:, None] * x[bad]
        t[bad] = t2
        nrm[bad] = np.linalg.norm(t2, axis=1)
    y = t / nrm[:, None]
    z = np.cross(x, y)
    return np.stack([x, y, z], axis=2)


def _chart_axes(charts, a, b):
    sb = np.sin(b)
    s = np.stack([sb * np.cos(a), sb * np.sin(a), np.cos(b)], axis=1)
    ds_da = np.stack([-sb * np.sin(a), sb * np.cos(a), np.zeros_like(a)], axis=1)
    ds_db = np.stack([np.cos(b) * np.cos(a), np.cos(b) * np.sin(a), -sb], axis=1)
    axes = np.einsum("nij,nj->ni", charts, s)
    d_da = np.einsum("nij,nj->ni", charts, ds_da)
    d_db = np.einsum("nij,nj->ni", charts, ds_db)
    return axes, d_da, d_db


class _Packer:
    """Maps the free subset of a field to/from the optimizer vector.

    Layout: [t (f,3) raveled, chart azimuth (f), chart inclination (f),
    phi (f)]. Frozen vertices keep their stored parameters bit-exactly.
    """

    def __init__(self, field, free_idx, ref_dirs):
        self.base_t = field.t.copy()
        self.base_axes = field.axes()
        self.base_phi = field.phi.copy()
        self.free = np.asarray(free_idx, dtype=np.int64)
        self.charts = _build_charts(self.base_axes[self.free],
                                    ref_dirs[self.free])

    @property
    def n_free(self):
        return len(self.free)

    def x0(self):
        f = self.n_free
        x = np.empty(6 * f)
        x[:3 * f] = self.base_t[self.free].ravel()
        x[3 * f:4 * f] = 0.0
        x[4 * f:5 * f] = np.pi / 2.0
        x[5 * f:] = self.base_phi[self.free]
        return x

    def split(self, x):
        f = self.n_free
        return (x[:3 * f].reshape(f, 3), x[3 * f:4 * f], x[4 * f:5 * f],
                x[5 * f:])

    def decode(self, x):
        tf, a, b, phif = self.split(x)
        axes_f, d_da, d_db = _chart_axes(self.charts, a, b)
        t = self.base_t.copy()
        axes = self.base_axes.copy()
        phi = self.base_phi.copy()
        t[self.free] = tf
        axes[self.free] = axes_f
        phi[self.free] = phif
        return t, axes, phi, d_da, d_db

    def to_field(self, x):
        t, axes, phi, _, _ = self.decode(x)
        az, inc = spherical_from_axis(axes)
        return DeformField(t, az, inc, phi)


# ----------------------------------------------------------------------
# smoothness neighborhoods

@dataclass
class SmoothNeighborhoods:
    rows: np.ndarray   # vertex i of each (i, j) pair
    cols: np.ndarray   # neighbor j
    w: np.ndarray      # 1 / |R_sm(i)|
    n: int

    @classmethod
    def build(cls, mesh, radius):
        indptr, indices = geodesic_neighborhoods(mesh, radius)
        counts = np.diff(indptr)
        rows = np.repeat(np.arange(len(counts)), counts)
        w = np.repeat(1.0 / np.maximum(counts, 1), counts)
        return cls(rows=rows, cols=indices, w=w, n=len(counts))


def smoothness_energy(field, rsm):
    """E_sm of a field: translation and angle differences over R_sm pairs."""
    et = field.t[rsm.rows] - field.t[rsm.cols]
    ep = wrap_angle(field.phi[rsm.rows] - field.phi[rsm.cols])
    return float(np.sum(rsm.w * (np.einsum("ki,ki->k", et, et) + ep ** 2)))


def _smooth_terms(t, phi, rsm, n):
    et = t[rsm.rows] - t[rsm.cols]
    ep = wrap_angle(phi[rsm.rows] - phi[rsm.cols])
    energy = float(np.sum(rsm.w * (np.einsum("ki,ki->k", et, et) + ep ** 2)))
    g_t = np.zeros((n, 3))
    for c in range(3):
        contrib = 2.0 * rsm.w * et[:, c]
        g_t[:, c] = (np.bincount(rsm.rows, weights=contrib, minlength=n)
                     - np.bincount(rsm.cols, weights=contrib, minlength=n))
    contrib = 2.0 * rsm.w * ep
    g_phi = (np.bincount(rsm.rows, weights=contrib, minlength=n)
             - np.bincount(rsm.cols, weights=contrib, minlength=n))
    return energy, g_t, g_phi


class _DeformObjective:
    """E = w_data * (point-to-plane | point-target) + w_sm * E_sm."""

    def __init__(self, packer, anchors, base_normals, rsm, w_data, w_sm,
                 corr=None, targets=None, data_free_only=False):
        self.p = packer
        self.anchors = anchors
        self.base_normals = base_normals
        self.rsm = rsm
        self.w_data = w_data
        self.w_sm = w_sm
        self.corr = corr
        self.targets = targets
        self.data_free_only = data_free_only

    def __call__(self, x):
        p = self.p
        free = p.free
        f = p.n_free
        t, axes, phi, d_da, d_db = p.decode(x)
        n = len(t)

        rot_f = rotation_matrices(axes[free], phi[free])
        pos_f = np.einsum("fij,fj->fi", rot_f, t[free]) + self.anchors[free]

        grad = np.zeros(6 * f)
        g_t_free = np.zeros((f, 3))
        g_a = np.zeros(f)
        g_b = np.zeros(f)
        g_phi_free = np.zeros(f)
        energy = 0.0

        if self.w_data > 0 and (self.corr is not None or self.targets is not None):
            d_ra, d_rb, d_rphi = rotation_jacobians(axes[free], phi[free],
                                                    d_da, d_db)
            tf = t[free]
            dp_da = np.einsum("fij,fj->fi", d_ra, tf)
            dp_db = np.einsum("fij,fj->fi", d_rb, tf)
            dp_dphi = np.einsum("fij,fj->fi", d_rphi, tf)

            if self.corr is not None:
                # point-to-plane residuals against fixed matches
                if self.data_free_only:
                    idx_full = free
                    pos_full = pos_f
                else:
                    rot = rotation_matrices(axes, phi)
                    pos_full = np.einsum("nij,nj->ni", rot, t) + self.anchors
                    idx_full = slice(None)
                diff = pos_full - self.corr.positions[idx_full]
                m = self.corr.normals[idx_full]
                w = self.corr.weights[idx_full]
                e = np.einsum("ni,ni->n", diff, m)
                energy += self.w_data * float(np.sum(w * e * e))
                if self.data_free_only:
                    coeff = 2.0 * self.w_data * w * e
                    mf = m
                else:
                    coeff = (2.0 * self.w_data * w * e)[free]
                    mf = m[free]
                g_t_free += coeff[:, None] * np.einsum("fji,fj->fi", rot_f, mf)
                g_a += coeff * np.einsum("fi,fi->f", dp_da, mf)
                g_b += coeff * np.einsum("fi,fi->f", dp_db, mf)
                g_phi_free += coeff * np.einsum("fi,fi->f", dp_dphi, mf)

            if self.targets is not None:
                rot = rotation_matrices(axes, phi)
                pos_full = np.einsum("nij,nj->ni", rot, t) + self.anchors
                diff = pos_full - self.targets
                energy += self.w_data * float(np.einsum("ni,ni->", diff, diff))
                coeff = 2.0 * self.w_data
                df = diff[free]
                g_t_free += coeff * np.einsum("fji,fj->fi", rot_f, df)
                g_a += coeff * np.einsum("fi,fi->f", dp_da, df)
                g_b += coeff * np.einsum("fi,fi->f", dp_db, df)
                g_phi_free += coeff * np.einsum("fi,fi->f", dp_dphi, df)

        if self.w_sm > 0 and self.rsm is not None:
            e_sm, g_t_sm, g_phi_sm = _smooth_terms(t, phi, self.rsm, n)
            energy += self.w_sm * e_sm
            g_t_free += self.w_sm * g_t_sm[free]
            g_phi_free += self.w_sm * g_phi_sm[free]

        grad[:3 * f] = g_t_free.ravel()
        grad[3 * f:4 * f] = g_a
        grad[4 * f:5 * f] = g_b
        grad[5 * f:] = g_phi_free
        return energy, grad


# ----------------------------------------------------------------------
# rigid alignment (E_initial)

def rigid_align(template, frame, cfg=None):
    """7-DOF similarity fit of the template to a frame, point-to-plane ICP.

    Correspondences and weights are fixed within each inner solve and
    re-matched between rounds until the energy stops changing.
    """
    cfg = cfg or TrackConfig()
    attach_kdtree(frame)
    x = np.zeros(7)  # [log scale, rotvec, translation]
    prev_e = None
    verts = template.vertices
    nrms = template.vertex_normals

    for round_i in range(cfg.rigid_max_rounds):
        s = float(np.exp(x[0]))
        xf = SimilarityTransform(scale=s, rotvec=x[1:4], translation=x[4:])
        rot = xf.rotation()
        corr = build_correspondence(template, xf.apply_points(verts),
                                    nrms @ rot.T, frame, d=cfg.d,
                                    alpha_deg=cfg.alpha_deg,
                                    workers=cfg.workers)
        if corr.weights.sum() < 7:
            raise DegenerateFitError(
                f"rigid alignment has only {int(corr.weights.sum())} valid "
                "correspondences (needs >= 7)")

        def objective(xv, corr=corr):
            s = float(np.exp(xv[0]))
            xf = SimilarityTransform(scale=s, rotvec=xv[1:4],
                                     translation=xv[4:])
            rp = verts @ xf.rotation().T
            pos = s * rp + xv[4:]
            diff = pos - corr.positions
            e = np.einsum("ni,ni->n", diff, corr.normals)
            w = corr.weights
            energy = float(np.sum(w * e * e))
            coeff = 2.0 * w * e
            jac = rotvec_jacobian(xv[1:4], verts)
            g = np.empty(7)
            g[0] = float(np.sum(coeff * s * np.einsum("ni,ni->n", rp,
                                                      corr.normals)))
            for k in range(3):
                g[1 + k] = float(np.sum(
                    coeff * s * np.einsum("ni,ni->n", jac[:, :, k],
                                          corr.normals)))
            g[4:] = (coeff[:, None] * corr.normals).sum(axis=0)
            return energy, g

        x, report = optim.minimize(objective, x, max_iters=cfg.max_inner_iters,
                                   ftol=cfg.inner_ftol)
        e = report.energy
        if prev_e is not None:
            rel = (prev_e - e) / max(prev_e, 1e-300)
            if rel < cfg.rel_stop:
                break
        prev_e = e
    return SimilarityTransform(scale=float(np.exp(x[0])), rotvec=x[1:4],
                               translation=x[4:])


# ----------------------------------------------------------------------
# non-rigid tracking (E_track)

class _LevelContext:
    def __init__(self, mesh, to_finest, s_sm):
        self.mesh = mesh
        self.to_finest = to_finest
        self.r = mesh.mean_edge_length
        self.rsm = SmoothNeighborhoods.build(mesh, s_sm * self.r)
        self.ref_dirs = _reference_tangents(mesh)


def _level_contexts(hierarchy, cfg):
    cache = getattr(hierarchy, "_track_cache", None)
    if cache is not None and cache[0] == cfg.s_sm:
        return cache[1]
    contexts = [_LevelContext(mesh, tf, cfg.s_sm)
                for mesh, tf in zip(hierarchy.levels, hierarchy.to_finest)]
    hierarchy._track_cache = (cfg.s_sm, contexts)
    return contexts


def _init_new_vertices(field, new_idx, ctx, cfg):
    """Axis from the current deformed normal; t, phi minimize E_sm."""
    normals = np.einsum("nij,nj->ni",
                        rotation_matrices(field.axes(), field.phi),
                        ctx.mesh.vertex_normals)
    az, inc = spherical_from_axis(normals[new_idx])
    field.azimuth[new_idx] = az
    field.inclination[new_idx] = inc

    packer = _Packer(field, new_idx, ctx.ref_dirs)
    obj = _DeformObjective(packer, ctx.mesh.vertices, ctx.mesh.vertex_normals,
                           ctx.rsm, w_data=0.0, w_sm=1.0)
    x, _ = optim.minimize(obj, packer.x0(), max_iters=cfg.max_inner_iters,
                          ftol=cfg.inner_ftol)
    return packer.to_field(x)


def _optimize_level(field, ctx, frame, cfg):
    """Weight schedule at one hierarchy level; returns field and last weights."""
    w_sm = cfg.w_sm_init
    prev_e = None
    free = np.arange(len(ctx.mesh.vertices))
    corr = None
    while True:
        if corr is None:
            pos, nrm = deform_points(ctx.mesh.vertices,
                                     ctx.mesh.vertex_normals, field)
            corr = build_correspondence(ctx.mesh, pos, nrm, frame,
                                        d=cfg.d, alpha_deg=cfg.alpha_deg,
                                        workers=cfg.workers)
        packer = _Packer(field, free, ctx.ref_dirs)
        obj = _DeformObjective(packer, ctx.mesh.vertices,
                               ctx.mesh.vertex_normals, ctx.rsm,
                               w_data=cfg.w_data, w_sm=w_sm, corr=corr,
                               data_free_only=True)
        x, report = optim.minimize(obj, packer.x0(),
                                   max_iters=cfg.max_inner_iters,
                                   ftol=cfg.inner_ftol)
        field = packer.to_field(x)
        e = report.energy
        rel = None if prev_e is None else (prev_e - e) / max(prev_e, 1e-300)
        logger.debug("level %d verts, w_sm=%.1f: E=%.6g rel=%s (%s)",
                     len(ctx.mesh.vertices), w_sm, e, rel, report.reason)
        if rel is not None and rel < cfg.rel_stop:
            break
        prev_e = e
        if report.reason == "max-iterations" and (rel is None
                                                  or rel >= cfg.relax_trigger):
            continue  # still improving at this stage, keep solving
        w_sm *= 0.5
        if w_sm < cfg.w_sm_floor:
            break
        corr = None  # refresh matches exactly when the weight changes
    return field, corr


def track_frame(template, field, frame, hierarchy, cfg=None):
    """Fit the deformation field to one frame through the hierarchy.

    Starts from the previous frame's field, optimizes coarse to fine, and
    returns the finest-level field plus the observed-vertex mask (weights
    at the final correspondence refresh).
    """
    cfg = cfg or TrackConfig()
    if len(frame) == 0:
        raise ValueError("empty frame")
    attach_kdtree(frame)
    contexts = _level_contexts(hierarchy, cfg)

    level_field = None
    corr = None
    for li, ctx in enumerate(contexts):
        if li == 0:
            level_field = field.subset(ctx.to_finest)
        else:
            parent = hierarchy.maps[li - 1]
            known = parent >= 0
            next_field = field.subset(ctx.to_finest)
            next_field.assign(np.flatnonzero(known),
                              level_field.subset(parent[known]))
            new_idx = np.flatnonzero(~known)
            if len(new_idx):
                next_field = _init_new_vertices(next_field, new_idx, ctx, cfg)
            level_field = next_field
        level_field, corr = _optimize_level(level_field, ctx, frame, cfg)

    out = field.copy()
    out.assign(contexts[-1].to_finest, level_field)
    return out, corr.observed.copy()


# ----------------------------------------------------------------------
# post-processing of outlier transforms

def post_process(template, field, threshold=2.0):
    """Reset vertices whose every one-ring distance at least doubled.

    Replacement parameters are the one-ring average (axis via slerp); the
    original field stays read-only during the single pass. Returns the new
    field and the indices that were modified.
    """
    pos, _ = deform_points(template.vertices, None, field)
    rows = np.repeat(np.arange(len(template.vertices)),
                     np.diff(template._ring_indptr))
    cols = template._ring_indices
    rest = np.linalg.norm(template.vertices[rows] - template.vertices[cols],
                          axis=1)
    deformed = np.linalg.norm(pos[rows] - pos[cols], axis=1)
    ratio = deformed / np.maximum(rest, 1e-300)
    min_ratio = np.full(len(template.vertices), np.inf)
    np.minimum.at(min_ratio, rows, ratio)

    flagged = np.flatnonzero(min_ratio > threshold)
    out = field.copy()
    for i in flagged:
        ring = template.one_ring(i)
        out.set_vertex_transform(
            i, average_transforms([field.vertex_transform(j) for j in ring]))
    return out, flagged


# ----------------------------------------------------------------------
# re-fit of the parameters to FEM targets (E_def)

def refit_unobserved(template, field, targets, unobserved, cfg=None,
                     rsm=None):
    """Re-fit transform parameters of unobserved vertices to point targets.

    Minimizes ``w_data * sum |A_i p_i - TP(p_i)|^2 + w_sm * E_sm`` over the
    parameters of unobserved vertices only; observed parameters are frozen
    bit-exactly.
    """
    cfg = cfg or TrackConfig()
    free_idx = np.flatnonzero(np.asarray(unobserved))
    if len(free_idx) == 0:
        return field.copy()
    if rsm is None:
        rsm = SmoothNeighborhoods.build(template,
                                        cfg.s_sm * template.mean_edge_length)
    packer = _Packer(field, free_idx, _reference_tangents(template))
    obj = _DeformObjective(packer, template.vertices, template.vertex_normals,
                           rsm, w_data=cfg.refit_w_data, w_sm=cfg.refit_w_sm,
                           targets=np.asarray(targets, dtype=np.float64))
    x, _ = optim.minimize(obj, packer.x0(), max_iters=cfg.max_inner_iters,
                          ftol=cfg.inner_ftol)
    return packer.to_field(x)
