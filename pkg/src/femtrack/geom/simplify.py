"""Quadric-error-metric edge-collapse simplification and the multi-resolution
hierarchy built from it.

Collapses run greedily in increasing quadric-cost order. A collapse is
rejected when it would break the mesh (link condition, degenerate or
flipped faces) or when the locally re-tested mesh self-intersects.
"""

import heapq
import itertools
import logging

import numpy as np

from .intersect import TriangleGrid, tri_pairs_intersect
from .mesh import TriMesh

logger = logging.getLogger(__name__)

_COND_LIMIT = 1e12
_BOUNDARY_WEIGHT = 1e3


def _plane_quadric(n, d, weight=1.0):
    p = np.append(n, d)
    return weight * np.outer(p, p)


def _vertex_quadrics(mesh):
    q = np.zeros((len(mesh.vertices), 4, 4))
    v, f = mesh.vertices, mesh.faces
    for fi in range(len(f)):
        n = mesh.face_normals[fi]
        a = mesh.face_areas[fi]
        if a <= 0.0:
            continue
        kf = _plane_quadric(n, -float(n @ v[f[fi, 0]]), a)
        for k in f[fi]:
            q[k] += kf
    # boundary preservation: penalize movement off the boundary edge plane
    if len(mesh.boundary_edges):
        fkey = {}
        for fi, face in enumerate(f):
            for a_, b_ in ((0, 1), (1, 2), (2, 0)):
                fkey[(min(face[a_], face[b_]), max(face[a_], face[b_]))] = fi
        for u, w in mesh.boundary_edges:
            fi = fkey[(min(u, w), max(u, w))]
            e = v[w] - v[u]
            elen = np.linalg.norm(e)
            if elen < 1e-300:
                continue
            nb = np.cross(e / elen, mesh.face_normals[fi])
            nrm = np.linalg.norm(nb)
            if nrm < 1e-12:
                continue
            nb /= nrm
            kb = _plane_quadric(nb, -float(nb @ v[u]), _BOUNDARY_WEIGHT * elen**2)
            q[u] += kb
            q[w] += kb
    return q


def _optimal_point(quadric, pi, pj):
    a = quadric[:3, :3]
    b = quadric[:3, 3]
    # determinant vs norm^3 as the conditioning guard (A is symmetric PSD)
    det = np.linalg.det(a)
    norm3 = max(np.sqrt(np.einsum("ij,ij->", a, a)), 1e-300) ** 3
    if not np.isfinite(det) or abs(det) * _COND_LIMIT < norm3:
        vbar = 0.5 * (pi + pj)
    else:
        vbar = np.linalg.solve(a, -b)
    h = np.append(vbar, 1.0)
    cost = float(h @ quadric @ h)
    return vbar, max(cost, 0.0)


class _SimplifyState:
    def __init__(self, mesh):
        self.pos = mesh.vertices.copy()
        self.faces = mesh.faces.copy()
        self.face_alive = np.ones(len(self.faces), dtype=bool)
        self.vertex_alive = np.ones(len(self.pos), dtype=bool)
        self.vfaces = [set() for _ in range(len(self.pos))]
        for fi, face in enumerate(self.faces):
            for k in face:
                self.vfaces[k].add(fi)
        self.quadrics = _vertex_quadrics(mesh)
        self.stamp = np.zeros(len(self.pos), dtype=np.int64)
        self.grid = TriangleGrid(max(mesh.mean_edge_length, 1e-12))
        for fi, face in enumerate(self.faces):
            self.grid.insert(fi, self.pos[face])
        self.area_floor = 1e-16 * max(mesh.bbox_diagonal(), 1e-300) ** 2
        self.ticket = itertools.count()

    def ring(self, i):
        out = set()
        for fi in self.vfaces[i]:
            out.update(int(k) for k in self.faces[fi])
        out.discard(i)
        return out

    def push_edge(self, a, b, heap):
        if a > b:
            a, b = b, a
        vbar, cost = _optimal_point(self.quadrics[a] + self.quadrics[b],
                                    self.pos[a], self.pos[b])
        heapq.heappush(heap, (cost, next(self.ticket), a, b,
                              self.stamp[a], self.stamp[b], vbar))

    def try_collapse(self, i, j, vbar):
        """Apply collapse (i,j) -> i at vbar unless it breaks the mesh."""
        shared_faces = self.vfaces[i] & self.vfaces[j]
        if not shared_faces:
            return False
        # link condition: shared ring vertices must all come from shared faces
        if len(self.ring(i) & self.ring(j)) != len(shared_faces):
            return False

        moved = sorted((self.vfaces[i] | self.vfaces[j]) - shared_faces)
        old_faces = self.faces[moved]
        new_faces = np.where(old_faces == j, i, old_faces)
        old_tris = self.pos[old_faces]
        new_tris = np.where((new_faces == i)[:, :, None], vbar,
                            self.pos[new_faces])
        old_n = np.cross(old_tris[:, 1] - old_tris[:, 0],
                         old_tris[:, 2] - old_tris[:, 0])
        new_n = np.cross(new_tris[:, 1] - new_tris[:, 0],
                         new_tris[:, 2] - new_tris[:, 0])
        if (0.5 * np.linalg.norm(new_n, axis=1) <= self.area_floor).any():
            return False
        if (np.einsum("ki,ki->k", old_n, new_n) <= 0.0).any():
            return False
        changed = list(zip(moved, new_faces, new_tris))

        if self._would_self_intersect(changed, shared_faces):
            return False

        # commit
        for fi in shared_faces:
            self.face_alive[fi] = False
            for k in self.faces[fi]:
                self.vfaces[k].discard(fi)
            self.grid.remove(fi)
        for fi, face, tri in changed:
            self.faces[fi] = face
            self.grid.update(fi, tri)
        self.vfaces[i] |= {fi for fi in self.vfaces[j] if self.face_alive[fi]}
        self.vfaces[j] = set()
        self.pos[i] = vbar
        self.vertex_alive[j] = False
        self.quadrics[i] = self.quadrics[i] + self.quadrics[j]
        self.stamp[i] += 1
        self.stamp[j] += 1
        return True

    def _would_self_intersect(self, changed, dead):
        changed_ids = {fi for fi, _, _ in changed} | dead
        mine, other = [], []
        for fi, face, tri in changed:
            cand = self.grid.candidates(tri) - changed_ids
            cand = [c for c in cand if self.face_alive[c]
                    and not set(self.faces[c]) & set(face)]
            if not cand:
                continue
            other.append(self.pos[self.faces[np.asarray(cand)]])
            mine.append(np.broadcast_to(tri, (len(cand), 3, 3)))
        if not mine:
            return False
        return bool(tri_pairs_intersect(np.concatenate(mine),
                                        np.concatenate(other)).any())


def simplify_level(mesh, target_vertex_count):
    """Greedy QEM simplification of ``mesh`` down to a vertex target.

    Returns ``(simplified, vertex_map, reached)`` where ``vertex_map`` maps
    each input vertex to its index in the result, or -1 if it was collapsed
    away. ``reached`` is False when no valid collapse remained above target.
    """
    if target_vertex_count < 4:
        raise ValueError("target vertex count must be >= 4")
    n = len(mesh.vertices)
    if n <= target_vertex_count:
        return mesh, np.arange(n, dtype=np.int64), True

    st = _SimplifyState(mesh)
    heap = []
    for a, b in mesh.edges:
        st.push_edge(int(a), int(b), heap)

    alive = n
    while alive > target_vertex_count and heap:
        cost, _, a, b, sa, sb, vbar = heapq.heappop(heap)
        if (not st.vertex_alive[a] or not st.vertex_alive[b]
                or st.stamp[a] != sa or st.stamp[b] != sb):
            continue
        if st.try_collapse(a, b, vbar):
            alive -= 1
            for k in st.ring(a):
                st.push_edge(a, k, heap)

    vertex_map = np.full(n, -1, dtype=np.int64)
    survivors = np.flatnonzero(st.vertex_alive)
    vertex_map[survivors] = np.arange(len(survivors))
    faces = vertex_map[st.faces[st.face_alive]]
    simplified = TriMesh(st.pos[survivors], faces)
    return simplified, vertex_map, alive <= target_vertex_count


class ResolutionHierarchy:
    """Mesh levels ordered coarsest to finest with vertex maps between them.

    ``maps[l]`` maps each vertex of level ``l+1`` to its identity in level
    ``l`` or -1 when the vertex first appears at level ``l+1``.
    ``to_finest[l]`` gives each level-l vertex's index in the finest mesh.
    """

    def __init__(self, levels, maps, to_finest):
        self.levels = levels
        self.maps = maps
        self.to_finest = to_finest

    def __len__(self):
        return len(self.levels)

    @property
    def finest(self):
        return self.levels[-1]

    @property
    def coarsest(self):
        return self.levels[0]


def build_hierarchy(mesh, coarse_target=1000):
    """Repeatedly halve the vertex count until roughly ``coarse_target``.

    Halving continues while the result stays at or above the target (the
    coarsest level ends up in [target, 2*target)), or until no valid
    collapse remains.
    """
    levels = [mesh]
    fine_to_coarse = []
    while len(levels[-1].vertices) // 2 >= coarse_target:
        target = len(levels[-1].vertices) // 2
        coarse, vmap, reached = simplify_level(levels[-1], target)
        if len(coarse.vertices) == len(levels[-1].vertices):
            logger.info("hierarchy: no valid collapses left at %d vertices",
                        len(coarse.vertices))
            break
        levels.append(coarse)
        fine_to_coarse.append(vmap)
        if not reached:
            logger.info("hierarchy: stopped above target at %d vertices",
                        len(coarse.vertices))
            break

    to_finest = [np.arange(len(mesh.vertices), dtype=np.int64)]
    for vmap in fine_to_coarse:
        finer_ids = to_finest[-1]
        n_coarse = int(vmap.max()) + 1
        inv = np.empty(n_coarse, dtype=np.int64)
        inv[vmap[vmap >= 0]] = np.flatnonzero(vmap >= 0)
        to_finest.append(finer_ids[inv])

    return ResolutionHierarchy(levels[::-1], fine_to_coarse[::-1],
                               to_finest[::-1])
