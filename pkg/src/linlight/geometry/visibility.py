"""Shadow-ray visibility against the posed coarse mesh.

Rays start 0.1 mm along the surface normal (the displacement bound of 3 mm
barely changes occlusion, so queries use the coarse surface).
"""

import numpy as np

from .. import kernels

RAY_EPS_MM = 0.1


class MeshOccluder:
    """BVH-backed any-hit queries over a posed triangle mesh."""

    def __init__(self, vertices: np.ndarray, faces: np.ndarray):
        self.bvh = kernels.Bvh(np.asarray(vertices, np.float32),
                               np.asarray(faces, np.int32))

    def visibility_matrix(self, points: np.ndarray, normals: np.ndarray,
                          directions: np.ndarray, eps: float = RAY_EPS_MM) -> np.ndarray:
        """(P,L) uint8: 1 where the ray from points[p] toward directions[l]
        escapes, 0 where occluded."""
        origins = points.astype(np.float32) + eps * normals.astype(np.float32)
        return kernels.vis_matrix(self.bvh, origins, directions)

    def visibility(self, point, direction, normal=None, eps: float = RAY_EPS_MM) -> int:
        d = np.asarray(direction, np.float64)
        if abs(np.linalg.norm(d) - 1.0) > 1e-5:
            raise ValueError("visibility: direction must be unit length")
        n = np.zeros(3) if normal is None else np.asarray(normal, np.float64)
        m = self.visibility_matrix(np.asarray(point, np.float32)[None],
                                   n.astype(np.float32)[None],
                                   d.astype(np.float32)[None], eps)
        return int(m[0, 0])
