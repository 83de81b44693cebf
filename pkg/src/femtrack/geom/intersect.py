"""Triangle-triangle intersection tests and self-intersection queries.

All tests are floating-point with a relative epsilon (default 1e-12 on
coordinates normalized by the local pair extent); pairs that share a
vertex index are never reported.
"""

import numpy as np

_EPS = 1e-12


def _cross2(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def tri_pairs_intersect(tri_a, tri_b, eps=_EPS):
    """Batched triangle-triangle intersection test.

    Parameters are (k, 3, 3) vertex arrays. Touching contacts within the
    epsilon band (shared edges, grazing vertices) count as non-intersecting.
    """
    tri_a = np.asarray(tri_a, dtype=np.float64)
    tri_b = np.asarray(tri_b, dtype=np.float64)
    k = len(tri_a)
    if k == 0:
        return np.zeros(0, dtype=bool)

    coords = np.concatenate([tri_a, tri_b], axis=1)  # (k,6,3)
    scale = np.maximum(
        (coords.max(axis=1) - coords.min(axis=1)).max(axis=1), 1e-300)

    nb = np.cross(tri_b[:, 1] - tri_b[:, 0], tri_b[:, 2] - tri_b[:, 0])
    na = np.cross(tri_a[:, 1] - tri_a[:, 0], tri_a[:, 2] - tri_a[:, 0])
    da = np.einsum("kij,kj->ki", tri_a - tri_b[:, 0:1], nb)
    db = np.einsum("kij,kj->ki", tri_b - tri_a[:, 0:1], na)
    tol_a = eps * scale * np.linalg.norm(nb, axis=1)
    tol_b = eps * scale * np.linalg.norm(na, axis=1)

    sep = ((da > tol_a[:, None]).all(axis=1) | (da < -tol_a[:, None]).all(axis=1)
           | (db > tol_b[:, None]).all(axis=1) | (db < -tol_b[:, None]).all(axis=1))
    coplanar = ((np.abs(da) <= tol_a[:, None]).all(axis=1)
                & (np.abs(db) <= tol_b[:, None]).all(axis=1))

    result = np.zeros(k, dtype=bool)

    main = ~sep & ~coplanar
    if main.any():
        idx = np.flatnonzero(main)
        hit = _edges_pierce(tri_a[idx], tri_b[idx], scale[idx], eps)
        hit |= _edges_pierce(tri_b[idx], tri_a[idx], scale[idx], eps)
        result[idx] = hit

    cop = ~sep & coplanar
    if cop.any():
        idx = np.flatnonzero(cop)
        result[idx] = _coplanar_overlap(tri_a[idx], tri_b[idx], nb[idx],
                                        scale[idx], eps)
    return result


def _edges_pierce(tri_s, tri_t, scale, eps):
    """True where any edge segment of tri_s properly crosses tri_t."""
    v0, e1, e2 = tri_t[:, 0], tri_t[:, 1] - tri_t[:, 0], tri_t[:, 2] - tri_t[:, 0]
    hit = np.zeros(len(tri_s), dtype=bool)
    for a, b in ((0, 1), (1, 2), (2, 0)):
        p0 = tri_s[:, a]
        d = tri_s[:, b] - p0
        h = np.cross(d, e2)
        det = np.einsum("ki,ki->k", e1, h)
        ok = np.abs(det) > eps * scale**3
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        s = p0 - v0
        u = np.einsum("ki,ki->k", s, h) * inv
        q = np.cross(s, e1)
        v = np.einsum("ki,ki->k", d, q) * inv
        t = np.einsum("ki,ki->k", e2, q) * inv
        hit |= (ok & (u >= eps) & (v >= eps) & (u + v <= 1.0 - eps)
                & (t >= eps) & (t <= 1.0 - eps))
    return hit


def _coplanar_overlap(tri_a, tri_b, nb, scale, eps):
    axis = np.argmax(np.abs(nb), axis=1)
    keep = np.stack([(axis + 1) % 3, (axis + 2) % 3], axis=1)
    rows = np.arange(len(tri_a))[:, None, None]
    a2 = tri_a[rows, np.arange(3)[None, :, None], keep[:, None, :]]
    b2 = tri_b[rows, np.arange(3)[None, :, None], keep[:, None, :]]
    tol = eps * scale**2

    hit = np.zeros(len(tri_a), dtype=bool)
    for i0, i1 in ((0, 1), (1, 2), (2, 0)):
        for j0, j1 in ((0, 1), (1, 2), (2, 0)):
            p, pd = a2[:, i0], a2[:, i1] - a2[:, i0]
            q, qd = b2[:, j0], b2[:, j1] - b2[:, j0]
            d1 = _cross2(qd, p - q)
            d2 = _cross2(qd, p + pd - q)
            d3 = _cross2(pd, q - p)
            d4 = _cross2(pd, q + qd - p)
            hit |= (d1 * d2 < -tol * tol) & (d3 * d4 < -tol * tol)
    hit |= _point_in_tri_2d(a2[:, 0], b2, tol)
    hit |= _point_in_tri_2d(b2[:, 0], a2, tol)
    return hit


def _point_in_tri_2d(p, tri, tol):
    s = np.stack([_cross2(tri[:, (i + 1) % 3] - tri[:, i], p - tri[:, i])
                  for i in range(3)], axis=1)
    return (s > tol[:, None]).all(axis=1) | (s < -tol[:, None]).all(axis=1)


def _shared_vertex_mask(faces, pairs):
    fa = faces[pairs[:, 0]]
    fb = faces[pairs[:, 1]]
    return (fa[:, :, None] == fb[:, None, :]).any(axis=(1, 2))


class AabbTree:
    """Static axis-aligned bounding-box tree over triangle boxes."""

    def __init__(self, bounds_min, bounds_max, leaf_size=8):
        self.bmin = np.asarray(bounds_min, dtype=np.float64)
        self.bmax = np.asarray(bounds_max, dtype=np.float64)
        self.leaf_size = leaf_size
        n = len(self.bmin)
        self.order = np.arange(n)
        centers = 0.5 * (self.bmin + self.bmax)
        self.nodes = []  # (min, max, left, right, start, count)
        self._build(0, n, centers)

    def _build(self, start, end, centers):
        idx = self.order[start:end]
        nmin = self.bmin[idx].min(axis=0)
        nmax = self.bmax[idx].max(axis=0)
        node_id = len(self.nodes)
        self.nodes.append([nmin, nmax, -1, -1, start, end - start])
        if end - start <= self.leaf_size:
            return node_id
        axis = int(np.argmax(nmax - nmin))
        mid = start + (end - start) // 2
        part = np.argsort(centers[idx, axis], kind="stable")
        self.order[start:end] = idx[part]
        left = self._build(start, mid, centers)
        right = self._build(mid, end, centers)
        self.nodes[node_id][2] = left
        self.nodes[node_id][3] = right
        return node_id

    def self_candidate_pairs(self):
        """All (i, j) box pairs, i < j, whose AABBs overlap."""
        pairs = []
        nodes = self.nodes
        stack = [(0, 0)]
        while stack:
            a, b = stack.pop()
            na, nb = nodes[a], nodes[b]
            if a == b:
                if na[2] < 0:
                    s, c = na[4], na[5]
                    ids = self.order[s:s + c]
                    ii, jj = np.triu_indices(c, k=1)
                    pairs.append(np.column_stack([ids[ii], ids[jj]]))
                else:
                    stack += [(na[2], na[2]), (na[3], na[3]), (na[2], na[3])]
                continue
            if ((na[0] > nb[1]) | (nb[0] > na[1])).any():
                continue
            if na[2] < 0 and nb[2] < 0:
                ida = self.order[na[4]:na[4] + na[5]]
                idb = self.order[nb[4]:nb[4] + nb[5]]
                gi, gj = np.meshgrid(ida, idb, indexing="ij")
                pairs.append(np.column_stack([gi.ravel(), gj.ravel()]))
            elif na[2] < 0 or (nb[2] >= 0 and nb[5] > na[5]):
                stack += [(a, nodes[b][2]), (a, nodes[b][3])]
            else:
                stack += [(nodes[a][2], b), (nodes[a][3], b)]
        if not pairs:
            return np.empty((0, 2), dtype=np.int64)
        out = np.concatenate(pairs)
        lo = np.minimum(out[:, 0], out[:, 1])
        hi = np.maximum(out[:, 0], out[:, 1])
        out = np.unique(np.column_stack([lo, hi]), axis=0)
        mask = out[:, 0] != out[:, 1]
        out = out[mask]
        keep = ((self.bmin[out[:, 0]] <= self.bmax[out[:, 1]])
                & (self.bmin[out[:, 1]] <= self.bmax[out[:, 0]])).all(axis=1)
        return out[keep]


def self_intersects(mesh, eps=_EPS):
    """True iff any two non-adjacent triangles of the mesh intersect."""
    tris = mesh.vertices[mesh.faces]
    pad = eps * max(mesh.bbox_diagonal(), 1e-300)
    tree = AabbTree(tris.min(axis=1) - pad, tris.max(axis=1) + pad)
    pairs = tree.self_candidate_pairs()
    if len(pairs) == 0:
        return False
    pairs = pairs[~_shared_vertex_mask(mesh.faces, pairs)]
    if len(pairs) == 0:
        return False
    return bool(tri_pairs_intersect(tris[pairs[:, 0]], tris[pairs[:, 1]], eps).any())


class TriangleGrid:
    """Uniform spatial hash of triangle AABBs supporting incremental edits.

    Used by the simplifier to find nearby triangles while collapsing edges.
    """

    def __init__(self, cell_size):
        self.h = float(cell_size)
        self.cells = {}
        self.tri_cells = {}

    def _span(self, tri):
        lo = np.floor(tri.min(axis=0) / self.h).astype(np.int64)
        hi = np.floor(tri.max(axis=0) / self.h).astype(np.int64)
        return lo, hi

    def _keys(self, tri):
        lo, hi = self._span(tri)
        return [(x, y, z)
                for x in range(lo[0], hi[0] + 1)
                for y in range(lo[1], hi[1] + 1)
                for z in range(lo[2], hi[2] + 1)]

    def insert(self, tid, tri):
        keys = self._keys(tri)
        self.tri_cells[tid] = keys
        for key in keys:
            self.cells.setdefault(key, set()).add(tid)

    def remove(self, tid):
        for key in self.tri_cells.pop(tid, ()):
            bucket = self.cells.get(key)
            if bucket is not None:
                bucket.discard(tid)
                if not bucket:
                    del self.cells[key]

    def update(self, tid, tri):
        self.remove(tid)
        self.insert(tid, tri)

    def candidates(self, tri):
        out = set()
        for key in self._keys(tri):
            out |= self.cells.get(key, set())
        return out
