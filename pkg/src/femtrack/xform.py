"""Per-vertex six-parameter rigid transforms and the global similarity.

Each vertex carries a translation, a unit rotation axis stored as two
spherical angles, and a rotation angle. The transform is anchored at the
vertex's undeformed position: translate there, apply the local translation,
rotate about the axis, translate back. For the vertex itself this reduces
to ``p' = R(axis, phi) @ t + p``.
"""

from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * np.pi


# ----------------------------------------------------------------------
# axis parameterization

def axis_from_spherical(azimuth, inclination):
    """Unit axis for spherical angles (azimuth about +z, inclination from +z)."""
    az = np.asarray(azimuth, dtype=np.float64)
    inc = np.asarray(inclination, dtype=np.float64)
    si = np.sin(inc)
    return np.stack([si * np.cos(az), si * np.sin(az), np.cos(inc)], axis=-1)


def spherical_from_axis(axis):
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis, axis=-1, keepdims=True)
    az = np.arctan2(axis[..., 1], axis[..., 0])
    inc = np.arccos(np.clip(axis[..., 2], -1.0, 1.0))
    return az, inc


def _spherical_tangents(azimuth, inclination):
    """d(axis)/d(azimuth) and d(axis)/d(inclination)."""
    az = np.asarray(azimuth, dtype=np.float64)
    inc = np.asarray(inclination, dtype=np.float64)
    si, ci = np.sin(inc), np.cos(inc)
    sa, ca = np.sin(az), np.cos(az)
    d_az = np.stack([-si * sa, si * ca, np.zeros_like(si)], axis=-1)
    d_inc = np.stack([ci * ca, ci * sa, -si], axis=-1)
    return d_az, d_inc


# ----------------------------------------------------------------------
# rotations

def rotation_matrices(axes, phis):
    """Rodrigues rotation matrices, vectorized: (n,3) axes, (n,) angles -> (n,3,3)."""
    k = np.atleast_2d(np.asarray(axes, dtype=np.float64))
    phi = np.atleast_1d(np.asarray(phis, dtype=np.float64))
    c, s = np.cos(phi), np.sin(phi)
    kx = _skew(k)
    kk = k[:, :, None] * k[:, None, :]
    eye = np.eye(3)[None]
    r = c[:, None, None] * eye + s[:, None, None] * kx + (1.0 - c)[:, None, None] * kk
    return r


def _skew(k):
    z = np.zeros(len(k))
    return np.stack([
        np.stack([z, -k[:, 2], k[:, 1]], axis=-1),
        np.stack([k[:, 2], z, -k[:, 0]], axis=-1),
        np.stack([-k[:, 1], k[:, 0], z], axis=-1),
    ], axis=1)


def rotation_jacobians(axes, phis, d_axes_u, d_axes_v):
    """Derivatives of the Rodrigues matrix.

    Returns (dR/du, dR/dv, dR/dphi), each (n,3,3), where u and v are two
    axis-chart parameters with tangents ``d_axes_u`` and ``d_axes_v``.
    """
    k = np.atleast_2d(np.asarray(axes, dtype=np.float64))
    phi = np.atleast_1d(np.asarray(phis, dtype=np.float64))
    c, s = np.cos(phi), np.sin(phi)
    eye = np.eye(3)[None]
    kx = _skew(k)
    kk = k[:, :, None] * k[:, None, :]
    d_phi = (-s[:, None, None] * eye + c[:, None, None] * kx
             + s[:, None, None] * kk)

    def d_axis(dk):
        dk = np.atleast_2d(dk)
        sym = dk[:, :, None] * k[:, None, :] + k[:, :, None] * dk[:, None, :]
        return s[:, None, None] * _skew(dk) + (1.0 - c)[:, None, None] * sym

    return d_axis(d_axes_u), d_axis(d_axes_v), d_phi


# ----------------------------------------------------------------------
# per-vertex transform

@dataclass
class VertexTransform:
    """Translation, spherical rotation axis, rotation angle."""
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))
    azimuth: float = 0.0
    inclination: float = 0.0
    phi: float = 0.0

    def axis(self):
        return axis_from_spherical(self.azimuth, self.inclination)

    def rotation(self):
        return rotation_matrices(self.axis()[None], [self.phi])[0]


def apply_vertex_transform(p, n, xf, anchor=None):
    """Transform point ``p`` (normal ``n``) by ``xf`` anchored at ``anchor``.

    With no anchor the point is its own anchor, the common case where a
    vertex is moved by its own transform.
    """
    p = np.asarray(p, dtype=np.float64)
    anchor = p if anchor is None else np.asarray(anchor, dtype=np.float64)
    r = xf.rotation()
    p_out = r @ (p - anchor + xf.t) + anchor
    n_out = None if n is None else r @ np.asarray(n, dtype=np.float64)
    return p_out, n_out


def transform_gradient(p, xf, anchor=None):
    """3x6 sensitivity of the transformed point to (t, azimuth, inclination, phi)."""
    p = np.asarray(p, dtype=np.float64)
    anchor = p if anchor is None else np.asarray(anchor, dtype=np.float64)
    axis = xf.axis()[None]
    d_az, d_inc = _spherical_tangents(xf.azimuth, xf.inclination)
    d_r_az, d_r_inc, d_r_phi = rotation_jacobians(
        axis, [xf.phi], d_az[None], d_inc[None])
    local = p - anchor + xf.t
    grad = np.empty((3, 6))
    grad[:, :3] = xf.rotation()
    grad[:, 3] = d_r_az[0] @ local
    grad[:, 4] = d_r_inc[0] @ local
    grad[:, 5] = d_r_phi[0] @ local
    return grad


def wrap_angle(x):
    """Wrap to (-pi, pi]."""
    x = np.asarray(x, dtype=np.float64)
    out = x - TWO_PI * np.round(x / TWO_PI)
    return np.where(out <= -np.pi, out + TWO_PI, out)


def angle_difference(phi_i, phi_j):
    """Squared angular difference, minimal over the 2-pi wrap."""
    return wrap_angle(np.asarray(phi_i) - np.asarray(phi_j)) ** 2


def slerp(u, v, t):
    """Spherical linear interpolation between unit vectors."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    dot = float(np.clip(u @ v, -1.0, 1.0))
    omega = np.arccos(dot)
    if omega < 1e-12:
        return u.copy()
    if np.pi - omega < 1e-12:
        # antipodal: no unique great circle; fall back to the nearer input
        return u.copy() if t < 0.5 else v.copy()
    so = np.sin(omega)
    out = (np.sin((1.0 - t) * omega) * u + np.sin(t * omega) * v) / so
    return out / np.linalg.norm(out)


def average_transforms(neighbors):
    """Average transform parameters; axis by left-fold pairwise slerp."""
    if not neighbors:
        raise ValueError("average_transforms needs a non-empty list")
    t = np.mean([xf.t for xf in neighbors], axis=0)
    phi = float(np.mean([xf.phi for xf in neighbors]))
    axis = neighbors[0].axis()
    for k, xf in enumerate(neighbors[1:], start=2):
        axis = slerp(axis, xf.axis(), 1.0 / k)
    az, inc = spherical_from_axis(axis)
    return VertexTransform(t=t, azimuth=float(az), inclination=float(inc), phi=phi)


# ----------------------------------------------------------------------
# deformation field over a whole template

class DeformField:
    """One VertexTransform per template vertex, stored as flat arrays."""

    def __init__(self, t, azimuth, inclination, phi):
        self.t = np.asarray(t, dtype=np.float64).reshape(-1, 3).copy()
        self.azimuth = np.asarray(azimuth, dtype=np.float64).ravel().copy()
        self.inclination = np.asarray(inclination, dtype=np.float64).ravel().copy()
        self.phi = np.asarray(phi, dtype=np.float64).ravel().copy()
        n = len(self.t)
        if not (len(self.azimuth) == len(self.inclination) == len(self.phi) == n):
            raise ValueError("inconsistent field component lengths")

    def __len__(self):
        return len(self.t)

    @classmethod
    def identity_for(cls, mesh):
        """Identity field with axes initialized to the vertex normals."""
        az, inc = spherical_from_axis(mesh.vertex_normals)
        n = len(mesh.vertices)
        return cls(np.zeros((n, 3)), az, inc, np.zeros(n))

    def copy(self):
        return DeformField(self.t, self.azimuth, self.inclination, self.phi)

    def axes(self):
        return axis_from_spherical(self.azimuth, self.inclination)

    def rotations(self):
        return rotation_matrices(self.axes(), self.phi)

    def vertex_transform(self, i):
        return VertexTransform(t=self.t[i].copy(), azimuth=float(self.azimuth[i]),
                               inclination=float(self.inclination[i]),
                               phi=float(self.phi[i]))

    def set_vertex_transform(self, i, xf):
        self.t[i] = xf.t
        self.azimuth[i] = xf.azimuth
        self.inclination[i] = xf.inclination
        self.phi[i] = xf.phi

    def subset(self, idx):
        return DeformField(self.t[idx], self.azimuth[idx],
                           self.inclination[idx], self.phi[idx])

    def assign(self, idx, other):
        self.t[idx] = other.t
        self.azimuth[idx] = other.azimuth
        self.inclination[idx] = other.inclination
        self.phi[idx] = other.phi

    def to_csv(self, path):
        header = "vertex,tx,ty,tz,az,incl,phi"
        rows = np.column_stack([np.arange(len(self)), self.t, self.azimuth,
                                self.inclination, self.phi])
        np.savetxt(path, rows, delimiter=",", header=header, comments="",
                   fmt=["%d"] + ["%.17g"] * 6)

    @classmethod
    def from_csv(cls, path):
        rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        order = np.argsort(rows[:, 0])
        rows = rows[order]
        return cls(rows[:, 1:4], rows[:, 4], rows[:, 5], rows[:, 6])


def deform_points(points, normals, field, anchors=None):
    """Apply a DeformField to points with per-point anchors (vectorized).

    Anchors default to the points themselves. Normals (if given) are
    rotated only.
    """
    points = np.asarray(points, dtype=np.float64)
    anchors = points if anchors is None else np.asarray(anchors, dtype=np.float64)
    r = field.rotations()
    local = points - anchors + field.t
    out = np.einsum("nij,nj->ni", r, local) + anchors
    n_out = None
    if normals is not None:
        n_out = np.einsum("nij,nj->ni", r, np.asarray(normals, dtype=np.float64))
    return out, n_out


def deform_mesh(mesh, field):
    """Deformed vertex positions and rotated normals of a template mesh."""
    return deform_points(mesh.vertices, mesh.vertex_normals, field)


# ----------------------------------------------------------------------
# global similarity

@dataclass
class SimilarityTransform:
    """p' = scale * R(rotvec) * p + translation."""
    scale: float = 1.0
    rotvec: np.ndarray = field(default_factory=lambda: np.zeros(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        self.rotvec = np.asarray(self.rotvec, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64)

    def rotation(self):
        theta = np.linalg.norm(self.rotvec)
        if theta < 1e-300:
            return np.eye(3)
        axis = self.rotvec / theta
        return rotation_matrices(axis[None], [theta])[0]

    def apply_points(self, points):
        return self.scale * np.asarray(points) @ self.rotation().T + self.translation

    def inverse(self):
        r = self.rotation()
        return SimilarityTransform(scale=1.0 / self.scale, rotvec=-self.rotvec,
                                   translation=-(r.T @ self.translation) / self.scale)


def apply_similarity(mesh, xf):
    """Apply a similarity transform to a mesh; normals are rotated."""
    return mesh.with_vertices(xf.apply_points(mesh.vertices))


def rotvec_jacobian(rotvec, points):
    """d(R(w) p)/dw for each point: (n, 3, 3)."""
    w = np.asarray(rotvec, dtype=np.float64)
    points = np.atleast_2d(points)
    theta2 = float(w @ w)
    if theta2 < 1e-24:
        return -_skew(points)
    theta = np.sqrt(theta2)
    r = rotation_matrices((w / theta)[None], [theta])[0]
    rp = points @ r.T
    out = np.empty((len(points), 3, 3))
    eye = np.eye(3)
    for k in range(3):
        v = np.cross(w, (eye[:, k] - r[:, k]))
        gen = w[k] * _skew_single(w) + _skew_single(v)
        out[:, :, k] = rp @ (gen / theta2).T
    return out


def _skew_single(k):
    return np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
