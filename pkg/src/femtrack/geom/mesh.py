"""Triangle surface meshes and single-view point cloud frames."""

import logging

import numpy as np
from scipy import sparse

logger = logging.getLogger(__name__)


class MeshError(ValueError):
    """Invalid mesh topology or geometry."""


class TriMesh:
    """Indexed triangle mesh with per-vertex normals and adjacency.

    Parameters
    ----------
    vertices : array_like, shape (n, 3)
        Vertex positions. Vertex order is preserved exactly; all
        correspondence in the pipeline is by index.
    faces : array_like, shape (m, 3)
        Vertex index triples, counter-clockwise = outward.

    Attributes
    ----------
    vertices : np.ndarray, (n, 3) float64
    faces : np.ndarray, (m, 3) int64
    vertex_normals : np.ndarray, (n, 3)
        Unit normals from area-weighted face-normal averaging.
    edges : np.ndarray, (e, 2)
        Unique undirected edges, each row sorted.
    mean_edge_length : float
        Arithmetic mean of all unique edge lengths.
    watertight : bool
        True iff every edge is shared by exactly two consistently
        oriented faces.
    """

    def __init__(self, vertices, faces):
        self.vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        self.faces = np.ascontiguousarray(faces, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise MeshError("vertices must have shape (n, 3)")
        if self.faces.size == 0:
            raise MeshError("empty mesh: no faces")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise MeshError("non-triangle face")
        if self.faces.min() < 0 or self.faces.max() >= len(self.vertices):
            raise MeshError("face index out of range")

        self._build_topology()
        self._build_normals()

    # ------------------------------------------------------------------
    def _build_topology(self):
        f = self.faces
        halfedges = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        und = np.sort(halfedges, axis=1)
        self.edges, edge_counts = np.unique(und, axis=0, return_counts=True)
        self._edge_counts = edge_counts

        ev = self.vertices[self.edges]
        self._edge_lengths = np.linalg.norm(ev[:, 0] - ev[:, 1], axis=1)
        self.mean_edge_length = float(self._edge_lengths.mean())

        # consistent orientation: no directed halfedge repeats
        key = halfedges[:, 0] * len(self.vertices) + halfedges[:, 1]
        oriented = len(np.unique(key)) == len(key)
        self.watertight = bool(oriented and np.all(edge_counts == 2))
        self.boundary_edges = self.edges[edge_counts == 1]

        # one-ring adjacency as CSR arrays
        both = np.concatenate([self.edges, self.edges[:, ::-1]])
        order = np.lexsort((both[:, 1], both[:, 0]))
        both = both[order]
        self._ring_indices = both[:, 1].copy()
        self._ring_indptr = np.searchsorted(
            both[:, 0], np.arange(len(self.vertices) + 1)
        )

    def _build_normals(self):
        v, f = self.vertices, self.faces
        c = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
        self.face_areas = 0.5 * np.linalg.norm(c, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            self.face_normals = c / (2.0 * self.face_areas)[:, None]
        self.face_normals[~np.isfinite(self.face_normals).all(axis=1)] = 0.0

        acc = np.zeros_like(v)
        for k in range(3):
            np.add.at(acc, f[:, k], c)
        norms = np.linalg.norm(acc, axis=1)
        ok = norms > 1e-300
        acc[ok] /= norms[ok, None]
        acc[~ok] = (0.0, 0.0, 1.0)  # isolated or degenerate vertices
        self.vertex_normals = acc

    # ------------------------------------------------------------------
    def __len__(self):
        return len(self.vertices)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_faces(self):
        return len(self.faces)

    def one_ring(self, i):
        """Indices of the vertices sharing an edge with vertex ``i``."""
        return self._ring_indices[self._ring_indptr[i]:self._ring_indptr[i + 1]]

    def edge_graph(self):
        """Sparse symmetric vertex graph weighted by edge length."""
        n = len(self.vertices)
        i, j = self.edges[:, 0], self.edges[:, 1]
        w = self._edge_lengths
        g = sparse.coo_matrix(
            (np.concatenate([w, w]),
             (np.concatenate([i, j]), np.concatenate([j, i]))),
            shape=(n, n),
        )
        return g.tocsr()

    def bbox_diagonal(self):
        return float(np.linalg.norm(self.vertices.max(axis=0) - self.vertices.min(axis=0)))

    def with_vertices(self, vertices):
        """New mesh with the same faces and replaced vertex positions."""
        return TriMesh(vertices, self.faces)

    def transformed(self, scale=1.0, rotation=None, translation=None):
        """New mesh with vertices mapped through ``s*R*p + t``."""
        v = self.vertices * float(scale)
        if rotation is not None:
            v = v @ np.asarray(rotation).T
        if translation is not None:
            v = v + np.asarray(translation)
        return TriMesh(v, self.faces)


class PointCloudFrame:
    """One observed frame: unordered 3D points with unit normals.

    Frame indices start at 1 (frame 0 is the undeformed template).
    """

    def __init__(self, points, normals, index=1):
        self.points = np.ascontiguousarray(points, dtype=np.float64)
        self.normals = np.ascontiguousarray(normals, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ValueError("points must have shape (k, 3)")
        if self.points.shape != self.normals.shape:
            raise ValueError("points and normals must have equal length")
        if index < 1:
            raise ValueError("frame index must be >= 1")
        self.index = int(index)

        norms = np.linalg.norm(self.normals, axis=1)
        if len(norms) and (norms < 1e-12).any():
            raise ValueError("point cloud contains zero-length normals")
        self.normals = self.normals / norms[:, None] if len(norms) else self.normals

    def __len__(self):
        return len(self.points)

    def transformed(self, scale=1.0, rotation=None, translation=None):
        p = self.points * float(scale)
        n = self.normals
        if rotation is not None:
            rotation = np.asarray(rotation)
            p = p @ rotation.T
            n = n @ rotation.T
        if translation is not None:
            p = p + np.asarray(translation)
        return PointCloudFrame(p, n, self.index)
