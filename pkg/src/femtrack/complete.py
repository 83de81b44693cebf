"""Per-frame pipeline: track, classify observed/unobserved, displace the
unobserved side through the tet mesh, and re-fit the template parameters.

The FEM step initializes surface displacements from tracking, diffuses them
to interior nodes with a thin-plate spline, alternates material estimation
(A1) and force evaluation (A2), then solves the constrained system (A3)
with the observed surface nodes pinned to their tracked positions.
"""

import logging
import warnings
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .fem import (MaterialEstimationError, assemble_split, assemble_stiffness,
                  embed_template, estimate_material, solve_displacements)
from .geom.metrics import mesh_area, mesh_volume
from .geom.mesh import TriMesh
from .geom.simplify import build_hierarchy
from .track import (SmoothNeighborhoods, TrackConfig, post_process,
                    refit_unobserved, rigid_align, track_frame)
from .tps import tps_eval, tps_fit
from .xform import DeformField, apply_similarity, deform_points

logger = logging.getLogger(__name__)


class FemSkipFrame(RuntimeError):
    """The FEM step cannot run for this frame (too few observed nodes)."""


@dataclass
class ContactSpec:
    """Template vertices where external force is applied, with unit directions."""
    vertices: np.ndarray
    directions: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.int64).ravel()
        self.directions = np.asarray(self.directions,
                                     dtype=np.float64).reshape(-1, 3)
        if len(self.vertices) != len(self.directions):
            raise ValueError("contact vertices and directions differ in length")
        norms = np.linalg.norm(self.directions, axis=1)
        if (norms < 1e-12).any():
            raise ValueError("zero-length contact direction")
        self.directions = self.directions / norms[:, None]

    @classmethod
    def load(cls, path):
        rows = np.loadtxt(path, ndmin=2)
        if rows.shape[1] != 4:
            raise ValueError(f"{path}: contact rows must be 'vertex fx fy fz'")
        return cls(rows[:, 0].astype(np.int64), rows[:, 1:])

    def save(self, path):
        with open(path, "w") as fh:
            for v, d in zip(self.vertices, self.directions):
                fh.write(f"{v} {d[0]:.17g} {d[1]:.17g} {d[2]:.17g}\n")


@dataclass
class PipelineConfig:
    track: TrackConfig = dataclass_field(default_factory=TrackConfig)
    fem_enabled: bool = True
    ell: int = 3                  # A1/A2 refinement iterations
    coarse_target: int = 1000     # hierarchy base size
    rigid_align_first: bool = True


@dataclass
class FrameState:
    mesh: TriMesh                 # deformed template
    normals: np.ndarray           # rotated per-vertex normals
    tet_nodes: np.ndarray
    field: DeformField
    observed: np.ndarray          # template-vertex mask
    material: object              # fem.Material or None
    forces: np.ndarray            # (m, 3) estimated forces or None
    metrics: dict


def displace_unobserved(tet, prev_tet_nodes, tracked_positions,
                        surface_observed, contact_nodes, contact_dirs,
                        ell=3, prev_material=None):
    """FEM displacement of the unobserved side for one frame.

    ``tracked_positions`` gives the tracked template positions of each tet
    surface node (aligned with ``tet.surface_nodes``); ``surface_observed``
    flags which of those nodes were observed. Returns the full node
    displacement vector, the estimated material, and the estimated forces.
    """
    surface = tet.surface_nodes
    interior = tet.interior_nodes
    m = tet.n_nodes

    observed_nodes = surface[surface_observed]
    if len(observed_nodes) < 3:
        raise FemSkipFrame(
            f"only {len(observed_nodes)} observed surface nodes (needs >= 3)")

    u_surface = tracked_positions - prev_tet_nodes[surface]
    u_init = np.zeros((m, 3))
    u_init[surface] = u_surface
    if len(interior):
        model = tps_fit(prev_tet_nodes[surface], u_surface)
        u_init[interior] = tps_eval(model, prev_tet_nodes[interior])

    # rest state is the previous frame's deformed tet mesh
    rest = tet.with_nodes(prev_tet_nodes)
    split = assemble_split(rest)

    contact_nodes = np.asarray(contact_nodes, dtype=np.int64)
    forces = np.zeros((m, 3))
    np.add.at(forces, contact_nodes, np.asarray(contact_dirs, dtype=np.float64))
    prescribed = np.zeros(m, dtype=bool)
    prescribed[contact_nodes] = True
    prescribed[interior] = True
    unknown = np.flatnonzero(~prescribed)

    rows = np.flatnonzero(prescribed)
    material = prev_material
    for it in range(ell):
        try:
            material = estimate_material(rest, u_init, (rows, forces[rows]),
                                         split=split)
        except MaterialEstimationError as exc:
            if material is None:
                raise FemSkipFrame(f"material estimation degenerate: {exc}")
            warnings.warn(f"material estimation degenerate ({exc}); keeping "
                          "previous frame's parameters", stacklevel=2)
        lam, mu = material.lame()
        k = lam * split[0] + mu * split[1]
        f_all = (k @ u_init.reshape(-1)).reshape(-1, 3)
        forces[unknown] = f_all[unknown]
        if it == 0:
            rows = np.arange(m)

    system = assemble_stiffness(rest, material, split=split)
    fixed = (observed_nodes, u_surface[surface_observed])
    u = solve_displacements(system, fixed, forces)
    return u, material, forces


def run_frame(prev, frame, template, hierarchy, tet, embedding, contact_nodes,
              contact_dirs, cfg, rsm_finest=None):
    """One tracking + completion step starting from the previous FrameState."""
    tcfg = cfg.track
    field, observed = track_frame(template, prev.field, frame, hierarchy, tcfg)
    n_post = 0
    if tcfg.post_process:
        field, modified = post_process(template, field,
                                       threshold=tcfg.post_ratio)
        n_post = len(modified)

    tet_nodes = prev.tet_nodes
    material = prev.material
    forces = prev.forces
    fem_ran = False
    if cfg.fem_enabled:
        surf_template = tet.surface_to_template
        tracked_pos, _ = deform_points(template.vertices, None, field)
        surface_observed = observed[surf_template]
        try:
            u, material, forces = displace_unobserved(
                tet, prev.tet_nodes, tracked_pos[surf_template],
                surface_observed, contact_nodes, contact_dirs,
                ell=cfg.ell, prev_material=prev.material)
            tet_nodes = prev.tet_nodes + u
            fem_ran = True
        except FemSkipFrame as exc:
            warnings.warn(f"frame {frame.index}: FEM step skipped ({exc})",
                          stacklevel=2)
            # carry the tet mesh along geometrically so later frames can retry
            tet_nodes = prev.tet_nodes.copy()
            tet_nodes[tet.surface_nodes] = tracked_pos[surf_template]
            if len(tet.interior_nodes):
                model = tps_fit(prev.tet_nodes[tet.surface_nodes],
                                tracked_pos[surf_template]
                                - prev.tet_nodes[tet.surface_nodes])
                tet_nodes[tet.interior_nodes] = (
                    prev.tet_nodes[tet.interior_nodes]
                    + tps_eval(model, prev.tet_nodes[tet.interior_nodes]))
        if fem_ran:
            targets = embedding.evaluate(tet, tet_nodes)
            field = refit_unobserved(template, field, targets, ~observed,
                                     tcfg, rsm=rsm_finest)

    positions, normals = deform_points(template.vertices,
                                       template.vertex_normals, field)
    mesh = template.with_vertices(positions)
    metrics = {
        "frame": frame.index,
        "volume": mesh_volume(mesh, require_watertight=False),
        "area": mesh_area(mesh),
        "observed_count": int(observed.sum()),
        "post_process_count": n_post,
        "fem_ran": fem_ran,
    }
    return FrameState(mesh=mesh, normals=normals, tet_nodes=tet_nodes,
                      field=field, observed=observed, material=material,
                      forces=forces, metrics=metrics)


def run_sequence(template, tet, frames, contacts, cfg=None, hierarchy=None):
    """Track a whole sequence; returns the list of per-frame states.

    Rigid alignment runs before the first frame only; each later frame
    starts from the previous frame's template and tet states.
    """
    cfg = cfg or PipelineConfig()
    states = []
    if not frames:
        return states

    if cfg.rigid_align_first:
        xf = rigid_align(template, frames[0], cfg.track)
        template = apply_similarity(template, xf)
        tet = tet.with_nodes(xf.apply_points(tet.nodes))
        logger.info("rigid alignment: scale %.6f |t| %.4g", xf.scale,
                    np.linalg.norm(xf.translation))

    if tet.surface_to_template is None:
        tet.attach_template(template)
    contact_nodes = _contacts_to_nodes(contacts, tet, template)

    if hierarchy is None:
        hierarchy = build_hierarchy(template, coarse_target=cfg.coarse_target)
    embedding = embed_template(template, tet)
    rsm_finest = SmoothNeighborhoods.build(
        template, cfg.track.s_sm * template.mean_edge_length)

    prev = FrameState(mesh=template, normals=template.vertex_normals.copy(),
                      tet_nodes=tet.nodes.copy(),
                      field=DeformField.identity_for(template),
                      observed=np.ones(len(template.vertices), dtype=bool),
                      material=None, forces=None, metrics={})
    for j, frame in enumerate(frames, start=1):
        frame.index = j
        try:
            prev = run_frame(prev, frame, template, hierarchy, tet, embedding,
                             contact_nodes, contacts.directions, cfg,
                             rsm_finest=rsm_finest)
        except Exception as exc:
            raise RuntimeError(f"frame {j} failed: {exc}") from exc
        states.append(prev)
        logger.info("frame %d: observed %d/%d, volume %.5f", j,
                    prev.metrics["observed_count"], len(template.vertices),
                    prev.metrics["volume"])
    return states


def _contacts_to_nodes(contacts, tet, template):
    """Map contact template vertices to their nearest tet surface nodes."""
    from scipy.spatial import cKDTree
    template_to_node = {int(tv): int(node) for node, tv in
                        zip(tet.surface_nodes, tet.surface_to_template)}
    nodes = []
    tree = None
    for v in contacts.vertices:
        node = template_to_node.get(int(v))
        if node is None:
            if tree is None:
                tree = cKDTree(tet.nodes[tet.surface_nodes])
            _, k = tree.query(template.vertices[v])
            node = int(tet.surface_nodes[k])
        nodes.append(node)
    return np.asarray(nodes, dtype=np.int64)
