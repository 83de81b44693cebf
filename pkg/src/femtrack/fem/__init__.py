from .mesh import (TetMesh, TetMeshError, box_tet_lattice, load_tet_mesh,
                   radius_edge_ratios, save_tet_mesh, tet_volumes)
from .stiffness import (Material, MaterialEstimationError, SolveError,
                        StiffnessSystem, assemble_split, assemble_stiffness,
                        compute_forces, estimate_material, solve_displacements)
from .embed import SurfaceEmbedding, closest_point_on_triangles, embed_template

__all__ = [
    "TetMesh", "TetMeshError", "box_tet_lattice", "load_tet_mesh",
    "save_tet_mesh", "radius_edge_ratios", "tet_volumes",
    "Material", "MaterialEstimationError", "SolveError", "StiffnessSystem",
    "assemble_split", "assemble_stiffness", "compute_forces",
    "estimate_material", "solve_displacements",
    "SurfaceEmbedding", "closest_point_on_triangles", "embed_template",
]
