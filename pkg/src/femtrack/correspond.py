"""Template-to-frame correspondence: nearest neighbors, acquisition-boundary
detection, and the 0/1 validity weights."""

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree


@dataclass
class Correspondence:
    """Per-template-vertex match into a frame with validity weights."""
    indices: np.ndarray   # (n,) matched point index
    weights: np.ndarray   # (n,) in {0, 1}
    positions: np.ndarray  # (n, 3) matched point positions
    normals: np.ndarray    # (n, 3) matched point normals

    @property
    def observed(self):
        return self.weights > 0.5


def nearest_neighbors(points, frame, workers=-1):
    """Exact Euclidean nearest frame point per query; ties take the lowest index."""
    if len(frame) == 0:
        raise ValueError("empty frame")
    tree = frame.kdtree if hasattr(frame, "kdtree") else cKDTree(frame.points)
    k = min(8, len(frame))
    d, i = tree.query(np.asarray(points), k=k, workers=workers)
    if k == 1:
        return np.atleast_1d(i)
    d = np.atleast_2d(d)
    i = np.atleast_2d(i)
    tied = d <= d[:, :1]
    return np.where(tied, i, len(frame)).min(axis=1)


def match_counts(indices, n_points):
    return np.bincount(np.asarray(indices), minlength=n_points)


def detect_boundary_points(frame, counts):
    """Frame points matched far more often than average: acquisition boundary.

    The average is taken over points chosen at least once; a point is
    boundary iff its count exceeds twice that average.
    """
    counts = np.asarray(counts)
    chosen = counts > 0
    if not chosen.any():
        return np.zeros(len(counts), dtype=bool)
    avg = counts[chosen].mean()
    return counts > 2.0 * avg


def compute_weights(template, deformed_positions, deformed_normals, frame,
                    indices, boundary, d=5.0, alpha_deg=60.0):
    """Validity weights: 0 for distance, normal-angle, or boundary rejections.

    The distance rule uses d * r with r the average edge length of the
    undeformed ``template``; the angle rule compares the deformed vertex
    normal with the matched point's normal.
    """
    indices = np.asarray(indices)
    matched_pos = frame.points[indices]
    matched_nrm = frame.normals[indices]
    dist = np.linalg.norm(np.asarray(deformed_positions) - matched_pos, axis=1)
    cos_alpha = np.cos(np.deg2rad(alpha_deg))
    cos_angle = np.einsum("ni,ni->n", np.asarray(deformed_normals), matched_nrm)

    w = np.ones(len(indices))
    w[dist > d * template.mean_edge_length] = 0.0
    w[cos_angle < cos_alpha] = 0.0
    if boundary is not None:
        w[np.asarray(boundary)[indices]] = 0.0
    return Correspondence(indices=indices, weights=w,
                          positions=matched_pos, normals=matched_nrm)


def build_correspondence(template, deformed_positions, deformed_normals,
                         frame, d=5.0, alpha_deg=60.0, workers=-1):
    """Full refresh: nearest neighbors, boundary heuristic, then weights."""
    idx = nearest_neighbors(deformed_positions, frame, workers=workers)
    boundary = detect_boundary_points(frame, match_counts(idx, len(frame)))
    return compute_weights(template, deformed_positions, deformed_normals,
                           frame, idx, boundary, d=d, alpha_deg=alpha_deg)


def attach_kdtree(frame):
    """Build and cache the frame's spatial index (frames are static)."""
    if not hasattr(frame, "kdtree"):
        frame.kdtree = cKDTree(frame.points)
    return frame
