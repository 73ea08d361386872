"""sketchmesh: sketch-to-mesh modeling engine.

Two-stage pipeline: a closed silhouette inflates into a coarse watertight
shape (constrained triangulation + Laplacian-magnitude diffusion), which
is then refined against pluggable occupancy fields — globally for the
coarse stage, region-restricted for on-surface detail carving — alongside
handle-based Laplacian deformation, an orthographic raster stack for
external detail predictors, and a deterministic, replayable session layer
with a WebSocket service and CLI.
"""

from .config import DEFAULT_CONFIG, EngineConfig
from .mesh import (
    MeshError,
    MirrorPlane,
    TriMesh,
    VertexRegion,
    bilateral_normal_filter,
    laplacian,
    midpoint_subdivide,
    mirror_weld,
    vertex_areas,
    vertex_normals,
)
from .fields import (
    AnalyticField,
    GridField,
    OccupancyField,
    VoxelGrid,
    load_grid,
    mesh_to_field,
    sample_points,
    save_grid,
    voxelize_strokes,
)
from .objio import read_obj, write_obj
from .refine import (
    FitParams,
    ProjectionSchedule,
    carve_details,
    extrude,
    fit_with_smoothness,
    project_to_isosurface,
    refine_coarse,
)
from .deform import HandleCurve, bind_handle, deform, prefactorize, prefactorize_async
from .silhouette import (
    LMField,
    SilhouetteCurve,
    diffuse_magnitudes,
    generate_initial,
    solve_positions,
    target_laplacians,
    triangulate_polygon,
)
from .session import Command, MeshDelta, Session, load_log, replay, save_log
from .stroke import Stroke

__version__ = "0.1.0"

__all__ = [
    "AnalyticField",
    "Command",
    "DEFAULT_CONFIG",
    "EngineConfig",
    "FitParams",
    "GridField",
    "HandleCurve",
    "LMField",
    "MeshDelta",
    "MeshError",
    "MirrorPlane",
    "OccupancyField",
    "ProjectionSchedule",
    "Session",
    "SilhouetteCurve",
    "Stroke",
    "TriMesh",
    "VertexRegion",
    "VoxelGrid",
    "bilateral_normal_filter",
    "bind_handle",
    "carve_details",
    "deform",
    "diffuse_magnitudes",
    "extrude",
    "fit_with_smoothness",
    "generate_initial",
    "laplacian",
    "load_grid",
    "load_log",
    "mesh_to_field",
    "midpoint_subdivide",
    "mirror_weld",
    "prefactorize",
    "prefactorize_async",
    "project_to_isosurface",
    "read_obj",
    "refine_coarse",
    "replay",
    "sample_points",
    "save_grid",
    "save_log",
    "solve_positions",
    "target_laplacians",
    "triangulate_polygon",
    "vertex_areas",
    "vertex_normals",
    "voxelize_strokes",
    "write_obj",
]
