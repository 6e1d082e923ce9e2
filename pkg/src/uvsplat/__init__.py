"""Multi-view UV feature splatting, normal-guided mesh deformation, and
mesh-anchored splat rendering, with desk-scale oracles and gradient checks."""

from .anchor import (
    GaussianSet,
    UVTriangleIndex,
    build_gaussians,
    drive,
    render_gaussians,
    resolve_positions,
    uv_to_surface,
)
from .deform import (
    DeformConfig,
    LandmarkSet,
    landmark_loss,
    laplacian_loss,
    normal_loss,
    optimize_offsets,
    semantic_pixel_mask,
)
from .geometry import (
    BlendModel,
    Camera,
    MeshError,
    TriMesh,
    VertexOffsets,
    deformed_vertices,
    face_normals,
    project,
    project_points,
    six_view_rig,
    vertex_laplacian,
)
from .raster import EMPTY, GBuffer, rasterize, render_normal_map, render_normal_map_vjp
from .splat import (
    FusionConfig,
    UVPyramid,
    ViewSplat,
    build_pyramid,
    fuse,
    fuse_backward,
    hole_fill,
    splat_confidence,
    splat_level,
    upsample_bilinear,
)
from .synth import SceneSpec, analytic_normal_maps, make_scene, oracle_fuse, oracle_gradcheck

__version__ = "0.1.0"
