from .mesh import MeshError, PointCloudFrame, TriMesh
from .io import (load_cloud, load_mesh, read_metrics_csv, save_cloud,
                 save_mesh, write_metrics_csv)
from .metrics import (bounding_ball_radius, geodesic_neighborhood,
                      geodesic_neighborhoods, mean_max_vertex_distance,
                      mesh_area, mesh_volume)
from .intersect import self_intersects, tri_pairs_intersect
from .simplify import ResolutionHierarchy, build_hierarchy, simplify_level

__all__ = [
    "MeshError", "PointCloudFrame", "TriMesh",
    "load_cloud", "load_mesh", "save_cloud", "save_mesh",
    "read_metrics_csv", "write_metrics_csv",
    "bounding_ball_radius", "geodesic_neighborhood", "geodesic_neighborhoods",
    "mean_max_vertex_distance", "mesh_area", "mesh_volume",
    "self_intersects", "tri_pairs_intersect",
    "ResolutionHierarchy", "build_hierarchy", "simplify_level",
]
