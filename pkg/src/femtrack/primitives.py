"""Built-in test shapes: cubes, boxes, grids, icospheres."""

import numpy as np

from .geom.mesh import TriMesh

# 12 triangles of an axis-aligned box, outward CCW, on the vertex order
# (x,y,z) in {0,1}^3 enumerated as bits zyx
_BOX_FACES = np.array([
    [0, 2, 1], [1, 2, 3],  # z = 0
    [4, 5, 6], [5, 7, 6],  # z = 1
    [0, 1, 4], [1, 5, 4],  # y = 0
    [2, 6, 3], [3, 6, 7],  # y = 1
    [0, 4, 2], [2, 4, 6],  # x = 0
    [1, 3, 5], [3, 7, 5],  # x = 1
], dtype=np.int64)


def box_mesh(size=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)):
    size = np.asarray(size, dtype=np.float64)
    origin = np.asarray(origin, dtype=np.float64)
    corners = np.array([[x, y, z] for z in (0, 1) for y in (0, 1) for x in (0, 1)],
                       dtype=np.float64)
    return TriMesh(origin + corners * size, _BOX_FACES)


def unit_cube_mesh():
    return box_mesh()


def regular_tetrahedron(edge=1.0):
    """A regular tetrahedron with the given edge length, outward faces."""
    v = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]],
                 dtype=np.float64)
    v *= edge / np.sqrt(8.0)
    f = np.array([[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]], dtype=np.int64)
    return TriMesh(v, f)


def grid_patch(nx, ny, dx=1.0, dy=None):
    """Open rectangular patch of (nx x ny) cells, each split into 2 triangles."""
    dy = dx if dy is None else dy
    xs, ys = np.meshgrid(np.arange(nx + 1) * dx, np.arange(ny + 1) * dy,
                         indexing="ij")
    v = np.column_stack([xs.ravel(), ys.ravel(), np.zeros(xs.size)])
    faces = []
    for i in range(nx):
        for j in range(ny):
            a = i * (ny + 1) + j
            b = a + (ny + 1)
            faces.append([a, b, a + 1])
            faces.append([a + 1, b, b + 1])
    return TriMesh(v, np.asarray(faces, dtype=np.int64))


def icosphere(radius=1.0, subdivisions=2, center=(0.0, 0.0, 0.0)):
    """Icosahedron subdivided ``subdivisions`` times, projected to a sphere."""
    t = (1.0 + np.sqrt(5.0)) / 2.0
    v = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=np.float64)
    v /= np.linalg.norm(v, axis=1)[:, None]
    f = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=np.int64)

    for _ in range(subdivisions):
        verts = list(v)
        midpoint = {}

        def mid(a, b):
            key = (a, b) if a < b else (b, a)
            if key not in midpoint:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                midpoint[key] = len(verts) - 1
            return midpoint[key]

        new_f = []
        for a, b, c in f:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_f += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        v = np.asarray(verts)
        f = np.asarray(new_f, dtype=np.int64)

    return TriMesh(np.asarray(center) + radius * v, f)
