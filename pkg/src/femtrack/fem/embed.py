"""Template-to-tet-surface embedding: each template vertex is pinned to its
closest rest-state point on the tet surface, expressed barycentrically so it
can be evaluated on the deformed surface."""

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree


def closest_point_on_triangles(p, tris):
    """Closest points of ``p`` (3,) on triangles (k,3,3): positions, barycentrics."""
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    ab, ac = b - a, c - a
    ap, bp, cp = p - a, p - b, p - c
    d1 = np.einsum("ki,ki->k", ab, ap)
    d2 = np.einsum("ki,ki->k", ac, ap)
    d3 = np.einsum("ki,ki->k", ab, bp)
    d4 = np.einsum("ki,ki->k", ac, bp)
    d5 = np.einsum("ki,ki->k", ab, cp)
    d6 = np.einsum("ki,ki->k", ac, cp)

    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    with np.errstate(divide="ignore", invalid="ignore"):
        t_ab = d1 / (d1 - d3)
        t_ac = d2 / (d2 - d6)
        t_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        denom = va + vb + vc
        v_in = vb / denom
        w_in = vc / denom

    k = len(tris)
    bary = np.empty((k, 3))
    conds = [
        (d1 <= 0) & (d2 <= 0),
        (d3 >= 0) & (d4 <= d3),
        (vc <= 0) & (d1 >= 0) & (d3 <= 0),
        (d6 >= 0) & (d5 <= d6),
        (vb <= 0) & (d2 >= 0) & (d6 <= 0),
        (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0),
    ]
    outs = [
        np.array([1.0, 0.0, 0.0])[None].repeat(k, 0),
        np.array([0.0, 1.0, 0.0])[None].repeat(k, 0),
        np.stack([1 - t_ab, t_ab, np.zeros(k)], axis=1),
        np.array([0.0, 0.0, 1.0])[None].repeat(k, 0),
        np.stack([1 - t_ac, np.zeros(k), t_ac], axis=1),
        np.stack([np.zeros(k), 1 - t_bc, t_bc], axis=1),
    ]
    interior = np.stack([1 - v_in - w_in, v_in, w_in], axis=1)
    chosen = np.full(k, -1, dtype=np.int64)
    for ci, cond in enumerate(conds):
        sel = cond & (chosen < 0)
        bary[sel] = outs[ci][sel]
        chosen[sel] = ci
    rest = chosen < 0
    bary[rest] = interior[rest]
    bary = np.nan_to_num(bary, nan=1.0 / 3.0)
    points = np.einsum("kf,kfi->ki", bary, tris)
    return points, bary


@dataclass
class SurfaceEmbedding:
    """Per template vertex: (surface triangle index, barycentric coords)."""
    tri_idx: np.ndarray
    bary: np.ndarray

    def evaluate(self, tet, nodes=None):
        """Embedded positions on a (possibly deformed) tet surface."""
        nodes = tet.nodes if nodes is None else np.asarray(nodes)
        tris = nodes[tet.surface_faces[self.tri_idx]]
        return np.einsum("kf,kfi->ki", self.bary, tris)


def embed_template(template, tet, k_candidates=32):
    """Closest-point embedding of template vertices onto the tet surface."""
    tris = tet.nodes[tet.surface_faces]
    centroids = tris.mean(axis=1)
    tree = cKDTree(centroids)
    k = min(k_candidates, len(tris))
    _, cand = tree.query(template.vertices, k=k)
    cand = np.atleast_2d(cand)

    n = len(template.vertices)
    tri_idx = np.empty(n, dtype=np.int64)
    bary = np.empty((n, 3))
    for vi in range(n):
        ids = np.atleast_1d(cand[vi])
        pts, bc = closest_point_on_triangles(template.vertices[vi], tris[ids])
        d = np.linalg.norm(pts - template.vertices[vi], axis=1)
        best = int(np.argmin(d))
        tri_idx[vi] = ids[best]
        bary[vi] = bc[best]
    return SurfaceEmbedding(tri_idx=tri_idx, bary=bary)
