"""femtrack: template-based tracking of deforming surfaces with linear-FEM
completion of the unobserved side."""

__version__ = "0.1.0"

from . import correspond, fem, geom, optim, primitives, tps, xform
from .geom import PointCloudFrame, TriMesh

__all__ = [
    "correspond", "fem", "geom", "optim", "primitives", "tps", "xform",
    "PointCloudFrame", "TriMesh", "__version__",
]
