"""Ground-truth sequence generation and the synthetic noise protocols.

Shapes are deformed by a linear FEM forward solve with a ramped contact
force; the back sides of the deformed surfaces are culled to emulate a
single viewpoint. Noise options: view-direction outliers, Gaussian noise
along normals, and resolution increase by Loop subdivision.
"""

import logging
from dataclasses import dataclass, field as dataclass_field, replace

import numpy as np

from .fem import (Material, TetMesh, assemble_stiffness, box_tet_lattice,
                  solve_displacements)
from .fem.mesh import sculpt_surface, smooth_lattice
from .geom.mesh import MeshError, PointCloudFrame, TriMesh

logger = logging.getLogger(__name__)


@dataclass
class NoiseSpec:
    kind: str = "none"        # none | outliers | gaussian | subdivide
    outlier_prob: float = 0.1
    outlier_low: float = -1.0   # in units of the template resolution r
    outlier_high: float = 4.0
    sigma_frac: float = 0.02    # variance fraction of the bounding ball radius
    sigma: float = None         # direct sigma override (model units)
    subdivision_steps: int = 1

    def __post_init__(self):
        if self.kind not in ("none", "outliers", "gaussian", "subdivide"):
            raise ValueError(f"unknown noise kind {self.kind!r}")


@dataclass
class SynthScenario:
    shape: str = "bar"                      # bar | box | capped_bar
    size: tuple = (0.9, 0.3, 0.3)
    cells: tuple = (12, 4, 4)
    smooth_iters: int = 3                   # rounds off the lattice staircase
    bump_amplitude: float = 0.3             # organic surface relief, in cells
    template_subdiv: int = 1                # template is finer than the tet surface
    material: Material = dataclass_field(
        default_factory=lambda: Material(5.999e4, 0.35))
    contact_dir: tuple = (0.0, 0.0, -1.0)
    contact_site: tuple = (0.85, 0.5, 1.0)  # bbox fractions; on the seen side
    n_frames: int = 10
    peak_displacement: float = 0.12         # target max displacement, frame n
    viewpoint: tuple = (0.8, 0.6, 2.0)
    noise: NoiseSpec = dataclass_field(default_factory=NoiseSpec)
    seed: int = 0

    def __post_init__(self):
        if self.n_frames < 1:
            raise ValueError("need at least one frame")
        if self.shape not in ("bar", "box", "capped_bar"):
            raise ValueError(f"unknown shape {self.shape!r}")


@dataclass
class SynthDataset:
    template: TriMesh
    tet: TetMesh
    truth: list            # ground-truth TriMesh per frame
    clouds: list           # culled (and noisy) PointCloudFrame per frame
    contact_vertices: np.ndarray
    contact_dirs: np.ndarray
    scenario: SynthScenario


def _build_shape(scn):
    if scn.shape == "box":
        size = (scn.size[0], scn.size[0], scn.size[0]) \
            if np.isscalar(scn.size) else scn.size
        tet = box_tet_lattice(size=size, cells=scn.cells)
    elif scn.shape == "bar":
        tet = box_tet_lattice(size=scn.size, cells=scn.cells)
    else:
        # capped_bar: bar with a hemispherical cap carved at the +x end
        size = np.asarray(scn.size, dtype=np.float64)
        center = np.array([size[0] - size[1] / 2.0, size[1] / 2.0,
                           size[2] / 2.0])
        radius = 0.55 * max(size[1], size[2])

        def mask(centers):
            in_bar = centers[:, 0] <= size[0] - size[1] / 2.0
            in_cap = np.linalg.norm(centers - center, axis=1) <= radius
            return in_bar | in_cap

        tet = box_tet_lattice(size=size, cells=scn.cells, cell_mask=mask)
    if scn.smooth_iters > 0:
        tet = smooth_lattice(tet, iterations=scn.smooth_iters)
    if scn.bump_amplitude > 0:
        size = np.asarray(scn.size, dtype=np.float64)
        cell = (size / np.asarray(scn.cells)).min()
        amp = scn.bump_amplitude * cell
        waves = 2.0 * np.pi * np.array([3.0, 2.0, 2.0]) / size

        def relief(p):
            return amp * (np.sin(waves[0] * p[:, 0])
                          * np.sin(waves[1] * p[:, 1] + 0.7)
                          * np.sin(waves[2] * p[:, 2] + 1.9))

        tet = sculpt_surface(tet, relief)
    return tet


def midpoint_subdivide(mesh, steps=1):
    """Flat 1-to-4 subdivision: original vertices first, midpoints appended.

    Unlike Loop subdivision this leaves the geometry unchanged, so the
    input vertices remain an exact subset of the output.
    """
    v, f = mesh.vertices, mesh.faces
    for _ in range(steps):
        edges = np.unique(np.sort(np.concatenate(
            [f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]]), axis=1), axis=0)
        mid_index = {(int(a), int(b)): len(v) + k
                     for k, (a, b) in enumerate(edges)}
        mids = 0.5 * (v[edges[:, 0]] + v[edges[:, 1]])
        v = np.vstack([v, mids])
        out = []
        for a, b, c in f:
            ab = mid_index[(min(a, b), max(a, b))]
            bc = mid_index[(min(b, c), max(b, c))]
            ca = mid_index[(min(c, a), max(c, a))]
            out += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        f = np.asarray(out, dtype=np.int64)
    return TriMesh(v, f)


def generate_sequence(scn):
    """Forward-simulate a scenario into ground truth plus culled clouds.

    The base (x = 0 face) is held fixed and the contact force at the free
    end ramps linearly over the frames. The template is the rest surface,
    refined by flat subdivision so the tet surface nodes stay an exact
    vertex subset (the tet mesh plays the simplified-template role).
    """
    tet = _build_shape(scn)
    coarse_surface, surface_nodes = tet.surface_trimesh()
    template = midpoint_subdivide(coarse_surface, scn.template_subdiv)
    tet.surface_to_template = np.arange(len(surface_nodes))

    cell_x = (np.asarray(scn.size, dtype=np.float64)[0]
              if not np.isscalar(scn.size) else scn.size) / scn.cells[0]
    base = np.flatnonzero(tet.nodes[:, 0] < tet.nodes[:, 0].min() + 0.3 * cell_x)
    lo, hi = tet.nodes.min(axis=0), tet.nodes.max(axis=0)
    site = lo + np.asarray(scn.contact_site, dtype=np.float64) * (hi - lo)
    surf_pos = tet.nodes[surface_nodes]
    contact_node = int(surface_nodes[np.argmin(
        np.linalg.norm(surf_pos - site, axis=1))])
    direction = np.asarray(scn.contact_dir, dtype=np.float64)
    direction = direction / np.linalg.norm(direction)

    system = assemble_stiffness(tet, scn.material)
    forces = np.zeros((tet.n_nodes, 3))
    forces[contact_node] = direction
    u_unit = solve_displacements(system, (base, np.zeros((len(base), 3))),
                                 forces)
    peak = np.linalg.norm(u_unit, axis=1).max()
    f_total = scn.peak_displacement / max(peak, 1e-300)

    view = np.asarray(scn.viewpoint, dtype=np.float64)
    center = 0.5 * (template.vertices.max(axis=0) + template.vertices.min(axis=0))
    view_dir = center - view
    view_dir /= np.linalg.norm(view_dir)
    r = template.mean_edge_length

    truth, clouds = [], []
    for k in range(1, scn.n_frames + 1):
        scale = f_total * k / scn.n_frames
        u = solve_displacements(system, (base, np.zeros((len(base), 3))),
                                forces * scale)
        coarse_k = TriMesh(tet.nodes[surface_nodes] + u[surface_nodes],
                           coarse_surface.faces)
        mesh_k = midpoint_subdivide(coarse_k, scn.template_subdiv)
        truth.append(mesh_k)

        source = mesh_k
        if scn.noise.kind == "subdivide":
            source = loop_subdivide(mesh_k, scn.noise.subdivision_steps)
        cloud = cull_to_viewpoint(source, view_dir, index=k)
        if scn.noise.kind == "outliers":
            cloud = add_outliers(cloud, view, r, prob=scn.noise.outlier_prob,
                                 low=scn.noise.outlier_low,
                                 high=scn.noise.outlier_high,
                                 seed=scn.seed + k)
        elif scn.noise.kind == "gaussian":
            from .geom.metrics import bounding_ball_radius
            cloud = add_gaussian_noise(
                cloud, bounding_ball_radius(template.vertices),
                sigma_frac=scn.noise.sigma_frac, sigma=scn.noise.sigma,
                seed=scn.seed + k)
        clouds.append(cloud)

    contact_vertex = int(np.flatnonzero(surface_nodes == contact_node)[0])
    return SynthDataset(template=template, tet=tet, truth=truth, clouds=clouds,
                        contact_vertices=np.array([contact_vertex]),
                        contact_dirs=direction[None].copy(), scenario=scn)


def cull_to_viewpoint(mesh, view_dir, index=1):
    """Keep front-facing vertices (normal opposing the view direction)."""
    view_dir = np.asarray(view_dir, dtype=np.float64)
    view_dir = view_dir / np.linalg.norm(view_dir)
    keep = mesh.vertex_normals @ (-view_dir) > 0.0
    return PointCloudFrame(mesh.vertices[keep], mesh.vertex_normals[keep],
                           index=index)


def add_outliers(frame, viewpoint, r, prob=0.1, low=-1.0, high=4.0, seed=0):
    """Perturb a random subset of points toward the viewpoint.

    Each point moves by ``x * v`` with ``v`` the unit vector to the
    viewpoint and ``x`` uniform in [low*r, high*r], with probability
    ``prob``; normals are kept.
    """
    rng = np.random.default_rng(seed)
    pick = rng.random(len(frame)) < prob
    x = rng.uniform(low * r, high * r, size=len(frame))
    v = np.asarray(viewpoint, dtype=np.float64) - frame.points
    v /= np.maximum(np.linalg.norm(v, axis=1, keepdims=True), 1e-300)
    points = frame.points + np.where(pick, x, 0.0)[:, None] * v
    return PointCloudFrame(points, frame.normals, frame.index)


def add_gaussian_noise(frame, bounding_ball_radius, sigma_frac=0.02,
                       sigma=None, seed=0):
    """Offset each point along its normal by N(0, sigma^2).

    By default ``sigma^2 = sigma_frac * bounding_ball_radius`` (the
    protocol's phrasing taken literally); pass ``sigma`` to use an explicit
    standard deviation instead.
    """
    rng = np.random.default_rng(seed)
    if sigma is None:
        sigma = np.sqrt(sigma_frac * bounding_ball_radius)
    offsets = rng.normal(0.0, sigma, size=len(frame))
    return PointCloudFrame(frame.points + offsets[:, None] * frame.normals,
                           frame.normals, frame.index)


def loop_subdivide(mesh, steps=1):
    """Standard Loop subdivision; face count quadruples per step."""
    out = mesh
    for _ in range(steps):
        out = _loop_once(out)
    return out


def _loop_once(mesh):
    if not mesh.watertight and len(mesh.boundary_edges) == 0:
        raise MeshError("Loop subdivision needs a manifold mesh")
    v, f = mesh.vertices, mesh.faces
    n = len(v)

    edge_key = {}
    boundary = {tuple(sorted(e)) for e in mesh.boundary_edges.tolist()}
    # odd (edge) vertices: collect the two opposite vertices per edge
    opposite = {}
    for face in f:
        for a, b, c in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
            key = (min(face[a], face[b]), max(face[a], face[b]))
            opposite.setdefault(key, []).append(face[c])

    new_pts = []
    for key, opp in opposite.items():
        a, b = key
        if key in boundary or len(opp) != 2:
            p = 0.5 * (v[a] + v[b])
        else:
            p = 0.375 * (v[a] + v[b]) + 0.125 * (v[opp[0]] + v[opp[1]])
        edge_key[key] = n + len(new_pts)
        new_pts.append(p)

    # even vertices: beta-weighted neighborhood average
    new_even = np.empty_like(v)
    for i in range(n):
        ring = mesh.one_ring(i)
        nb_boundary = [j for j in ring if (min(i, j), max(i, j)) in boundary]
        if nb_boundary:
            new_even[i] = 0.75 * v[i] + 0.125 * v[nb_boundary].sum(axis=0)
            continue
        k = len(ring)
        beta = (1.0 / k) * (0.625 - (0.375 + 0.25 * np.cos(2.0 * np.pi / k)) ** 2)
        new_even[i] = (1.0 - k * beta) * v[i] + beta * v[ring].sum(axis=0)

    faces = []
    for face in f:
        e01 = edge_key[(min(face[0], face[1]), max(face[0], face[1]))]
        e12 = edge_key[(min(face[1], face[2]), max(face[1], face[2]))]
        e20 = edge_key[(min(face[2], face[0]), max(face[2], face[0]))]
        faces += [[face[0], e01, e20], [face[1], e12, e01],
                  [face[2], e20, e12], [e01, e12, e20]]

    return TriMesh(np.vstack([new_even, np.asarray(new_pts)]),
                   np.asarray(faces, dtype=np.int64))
