"""Tetrahedral volume meshes, .node/.ele I/O, and a structured box lattice
generator (6 tets per cube) for synthetic scenarios."""

import logging
import warnings
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

# outward faces of a positively oriented tet (v0, v1, v2, v3)
_TET_FACES = np.array([[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]], dtype=np.int64)

# 6-tet Kuhn split of a cube, corners indexed by bits (x, y, z)
_CUBE_TETS = np.array([
    [0, 1, 3, 7], [0, 3, 2, 7], [0, 2, 6, 7],
    [0, 6, 4, 7], [0, 4, 5, 7], [0, 5, 1, 7],
], dtype=np.int64)


class TetMeshError(ValueError):
    """Invalid tetrahedral mesh."""


def tet_volumes(nodes, tets):
    v = nodes[tets]
    return np.einsum("ki,ki->k", v[:, 1] - v[:, 0],
                     np.cross(v[:, 2] - v[:, 0], v[:, 3] - v[:, 0])) / 6.0


def radius_edge_ratios(nodes, tets):
    """Circumradius over shortest edge, per tet."""
    v = nodes[tets]
    a = v[:, 1] - v[:, 0]
    b = v[:, 2] - v[:, 0]
    c = v[:, 3] - v[:, 0]
    cross_bc = np.cross(b, c)
    denom = 2.0 * np.einsum("ki,ki->k", a, cross_bc)
    num = (np.einsum("ki,ki->k", a, a)[:, None] * cross_bc
           + np.einsum("ki,ki->k", b, b)[:, None] * np.cross(c, a)
           + np.einsum("ki,ki->k", c, c)[:, None] * np.cross(a, b))
    with np.errstate(divide="ignore", invalid="ignore"):
        circ = np.linalg.norm(num / denom[:, None], axis=1)
    edges = np.stack([v[:, i] - v[:, j] for i, j in
                      ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))], axis=1)
    shortest = np.linalg.norm(edges, axis=2).min(axis=1)
    return circ / shortest


class TetMesh:
    """Tet mesh with surface extraction and an optional template mapping.

    Surface nodes are expected to be a subset of the tracked template's
    vertices; ``attach_template`` builds that index map.
    """

    def __init__(self, nodes, tets, validate=True):
        self.nodes = np.ascontiguousarray(nodes, dtype=np.float64)
        self.tets = np.ascontiguousarray(tets, dtype=np.int64)
        if self.nodes.ndim != 2 or self.nodes.shape[1] != 3:
            raise TetMeshError("nodes must have shape (m, 3)")
        if self.tets.ndim != 2 or self.tets.shape[1] != 4:
            raise TetMeshError("tets must have shape (k, 4)")
        if self.tets.min() < 0 or self.tets.max() >= len(self.nodes):
            raise TetMeshError("tet index out of range")

        vols = tet_volumes(self.nodes, self.tets)
        if (vols < 0).any():
            flipped = vols < 0
            self.tets[flipped] = self.tets[flipped][:, [0, 1, 3, 2]]
            logger.info("reoriented %d inverted tets", int(flipped.sum()))
            vols = tet_volumes(self.nodes, self.tets)
        if validate and (vols < 1e-14).any():
            raise TetMeshError("degenerate tet (volume < 1e-14)")

        self._extract_surface()
        self.surface_to_template = None
        ratios = radius_edge_ratios(self.nodes, self.tets)
        bad = int((ratios > 2.0).sum())
        if bad:
            warnings.warn(f"{bad} tets exceed radius-edge ratio 2 "
                          f"(max {ratios.max():.3f})", stacklevel=2)

    def _extract_surface(self):
        faces = self.tets[:, _TET_FACES].reshape(-1, 3)
        key = np.sort(faces, axis=1)
        _, first, counts = np.unique(key, axis=0, return_index=True,
                                     return_counts=True)
        self.surface_faces = faces[first[counts == 1]]
        self.surface_nodes = np.unique(self.surface_faces)
        self.is_surface = np.zeros(len(self.nodes), dtype=bool)
        self.is_surface[self.surface_nodes] = True
        self.interior_nodes = np.flatnonzero(~self.is_surface)

    @property
    def n_nodes(self):
        return len(self.nodes)

    def attach_template(self, template, tol_factor=1e-6):
        """Map each surface node to its (coincident) template vertex index."""
        from scipy.spatial import cKDTree
        tree = cKDTree(template.vertices)
        d, idx = tree.query(self.nodes[self.surface_nodes])
        tol = tol_factor * max(template.bbox_diagonal(), 1e-300)
        if (d > tol).any():
            warnings.warn(
                f"{int((d > tol).sum())} tet surface nodes are not coincident "
                f"with template vertices (max offset {d.max():.3e})",
                stacklevel=2)
        self.surface_to_template = idx.astype(np.int64)
        return self.surface_to_template

    def with_nodes(self, nodes):
        """Same connectivity on replaced node positions (no re-validation)."""
        out = TetMesh.__new__(TetMesh)
        out.nodes = np.ascontiguousarray(nodes, dtype=np.float64)
        out.tets = self.tets
        out.surface_faces = self.surface_faces
        out.surface_nodes = self.surface_nodes
        out.is_surface = self.is_surface
        out.interior_nodes = self.interior_nodes
        out.surface_to_template = self.surface_to_template
        return out

    def surface_trimesh(self):
        """Surface triangle mesh with compacted vertex numbering.

        Returns ``(mesh, surface_nodes)``: template vertex i of the mesh is
        tet node ``surface_nodes[i]``.
        """
        from ..geom.mesh import TriMesh
        remap = np.full(len(self.nodes), -1, dtype=np.int64)
        remap[self.surface_nodes] = np.arange(len(self.surface_nodes))
        return (TriMesh(self.nodes[self.surface_nodes],
                        remap[self.surface_faces]),
                self.surface_nodes.copy())


# ----------------------------------------------------------------------
# tetgen-style plain text I/O

def _detect_base(first_index):
    return 1 if first_index == 1 else 0


def load_tet_mesh(node_path, ele_path):
    node_lines = _data_lines(node_path)
    n, dim = int(node_lines[0][0]), int(node_lines[0][1])
    if dim != 3:
        raise TetMeshError(f"{node_path}: expected dimension 3, got {dim}")
    rows = node_lines[1:n + 1]
    base = _detect_base(int(float(rows[0][0])))
    nodes = np.array([[float(x) for x in row[1:4]] for row in rows])

    ele_lines = _data_lines(ele_path)
    k, per = int(ele_lines[0][0]), int(ele_lines[0][1])
    if per != 4:
        raise TetMeshError(f"{ele_path}: expected 4 nodes per tet, got {per}")
    tets = np.array([[int(x) - base for x in row[1:5]]
                     for row in ele_lines[1:k + 1]], dtype=np.int64)
    return TetMesh(nodes, tets)


def save_tet_mesh(node_path, ele_path, tet):
    with open(node_path, "w") as fh:
        fh.write(f"{len(tet.nodes)} 3 0 0\n")
        for i, p in enumerate(tet.nodes, start=1):
            fh.write(f"{i} {p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")
    with open(ele_path, "w") as fh:
        fh.write(f"{len(tet.tets)} 4 0\n")
        for i, t in enumerate(tet.tets + 1, start=1):
            fh.write(f"{i} {t[0]} {t[1]} {t[2]} {t[3]}\n")


def _data_lines(path):
    out = []
    for line in Path(path).read_text().splitlines():
        body = line.split("#", 1)[0].strip()
        if body:
            out.append(body.split())
    if not out:
        raise TetMeshError(f"{path}: empty file")
    return out


# ----------------------------------------------------------------------
# structured lattice generator

def _tet_edges(tets):
    edges = np.concatenate([tets[:, [a, b]]
                            for a, b in ((0, 1), (0, 2), (0, 3),
                                         (1, 2), (1, 3), (2, 3))])
    return np.unique(np.sort(edges, axis=1), axis=0)


def harmonic_interior(tet, nodes):
    """Re-solve interior node positions as harmonic in the tet edge graph.

    Surface rows of ``nodes`` are the Dirichlet data; returns a full copy.
    """
    from scipy import sparse
    from scipy.sparse.linalg import spsolve

    nodes = np.asarray(nodes, dtype=np.float64).copy()
    interior = tet.interior_nodes
    if not len(interior):
        return nodes
    surf = tet.surface_nodes
    edges = _tet_edges(tet.tets)
    n = len(nodes)
    full = sparse.coo_matrix(
        (np.ones(2 * len(edges)),
         (np.concatenate([edges[:, 0], edges[:, 1]]),
          np.concatenate([edges[:, 1], edges[:, 0]]))),
        shape=(n, n)).tocsr()
    lap = sparse.diags(np.asarray(full.sum(axis=1)).ravel()) - full
    lap_ii = lap[interior][:, interior].tocsc()
    lap_is = lap[interior][:, surf].tocsr()
    nodes[interior] = spsolve(lap_ii, -lap_is @ nodes[surf]).reshape(-1, 3)
    return nodes


def smooth_lattice(tet, iterations=3, factor=0.5):
    """Round a lattice mesh: surface Laplacian smoothing, harmonic interior.

    Keeps connectivity; interior nodes follow by solving the tet edge-graph
    Laplace equation with the smoothed surface as boundary. Returns a new
    TetMesh (validated, so inverted tets would raise).
    """
    from scipy import sparse

    nodes = tet.nodes.copy()
    surf = tet.surface_nodes
    sset = tet.is_surface

    edges = _tet_edges(tet.tets)
    surf_edges = edges[sset[edges[:, 0]] & sset[edges[:, 1]]]

    n = len(nodes)
    adj = sparse.coo_matrix(
        (np.ones(2 * len(surf_edges)),
         (np.concatenate([surf_edges[:, 0], surf_edges[:, 1]]),
          np.concatenate([surf_edges[:, 1], surf_edges[:, 0]]))),
        shape=(n, n)).tocsr()
    deg = np.maximum(np.asarray(adj.sum(axis=1)).ravel(), 1.0)
    for _ in range(iterations):
        mean = adj @ nodes / deg[:, None]
        nodes[surf] = (1.0 - factor) * nodes[surf] + factor * mean[surf]

    return TetMesh(harmonic_interior(tet, nodes), tet.tets)


def sculpt_surface(tet, displacement_fn):
    """Offset surface nodes along their outward normals; harmonic interior.

    ``displacement_fn(positions) -> (k,)`` gives the normal offset per
    surface node. Used to give synthetic shapes organic curvature.
    """
    surf_mesh, surf_nodes = tet.surface_trimesh()
    offsets = np.asarray(displacement_fn(surf_mesh.vertices), dtype=np.float64)
    nodes = tet.nodes.copy()
    nodes[surf_nodes] += offsets[:, None] * surf_mesh.vertex_normals
    return TetMesh(harmonic_interior(tet, nodes), tet.tets)


def box_tet_lattice(size=(1.0, 1.0, 1.0), cells=(6, 2, 2),
                    origin=(0.0, 0.0, 0.0), cell_mask=None):
    """Axis-aligned box filled with 6 tets per lattice cube.

    ``cell_mask(centers) -> bool array`` optionally carves the lattice
    (cells whose center is rejected are removed; nodes are compacted).
    """
    nx, ny, nz = cells
    size = np.asarray(size, dtype=np.float64)
    origin = np.asarray(origin, dtype=np.float64)
    h = size / np.asarray(cells, dtype=np.float64)

    gx, gy, gz = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1),
                             np.arange(nz + 1), indexing="ij")
    nodes = origin + np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()]) * h

    def node_id(ix, iy, iz):
        return (ix * (ny + 1) + iy) * (nz + 1) + iz

    ci, cj, ck = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz),
                             indexing="ij")
    ci, cj, ck = ci.ravel(), cj.ravel(), ck.ravel()
    if cell_mask is not None:
        centers = origin + (np.column_stack([ci, cj, ck]) + 0.5) * h
        keep = np.asarray(cell_mask(centers), dtype=bool)
        ci, cj, ck = ci[keep], cj[keep], ck[keep]

    corners = np.stack([node_id(ci + (b & 1), cj + ((b >> 1) & 1),
                                ck + ((b >> 2) & 1))
                        for b in range(8)], axis=1)
    tets = corners[:, _CUBE_TETS].reshape(-1, 4)

    used = np.unique(tets)
    remap = np.full(len(nodes), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return TetMesh(nodes[used], remap[tets])
