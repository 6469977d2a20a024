from . import uvmaps
from .rig import (HandRig, Pose, euler_to_mat, load_obj, make_hand_rig,
                  make_uv_sphere, save_obj, skin, skin_with_matrices,
                  skinning_matrices)
from .uvmaps import (UvGeometryMaps, apply_displacement, displacement_from_raw,
                     displacement_from_raw_t, refined_normals_t, unwrap,
                     vertex_normals, DISPLACEMENT_RANGE_MM)
from .visibility import MeshOccluder, RAY_EPS_MM
from .camera import (Camera, RasterMap, rasterize_geometry, sample_texture,
                     sample_texture_np, unwrap_image)

__all__ = [
    "HandRig", "Pose", "euler_to_mat", "load_obj", "make_hand_rig", "save_obj",
    "skin", "skin_with_matrices", "skinning_matrices", "UvGeometryMaps",
    "apply_displacement", "displacement_from_raw", "displacement_from_raw_t",
    "refined_normals_t", "unwrap", "vertex_normals", "DISPLACEMENT_RANGE_MM",
    "MeshOccluder", "RAY_EPS_MM", "Camera", "RasterMap", "rasterize_geometry",
    "sample_texture", "sample_texture_np", "unwrap_image",
]
