"""Engine configuration.

A single frozen dataclass holds every tunable the engine exposes. Session
logs embed ``config_hash()`` so a replay refuses to run against a different
configuration (replay determinism is part of the engine contract).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, replace


@dataclass(frozen=True)
class EngineConfig:
    # Laplacian discretization: "uniform" (default, robust on interactive
    # meshes) or "cotangent".
    laplacian_weighting: str = "uniform"

    # Soft-constraint row weight for the diffusion / position solves.
    constraint_weight: float = 1.0

    # Silhouette inflation.
    lm_default_factor: float = 0.05      # x curve bbox diagonal
    resample_factor: float = 1.0 / 64.0  # stroke resample edge length, x bbox diagonal
    weld_thickness_factor: float = 0.02  # initial sheet lift before mirroring, x bbox diagonal

    # Isosurface projection schedule.
    projection_iters: int = 5
    projection_step0: float = 0.1
    projection_ratio: float = 0.5
    occupancy_alpha: float = 0.5
    sign_convention: str = "toward_surface"  # or "as_printed"
    recompute_normals: bool = False
    outer_rounds: int = 1

    # Smoothness-regularized fitting.
    lambda_coarse: float = 1.0
    lambda_detail: float = 0.2
    smooth_lambda: float = 10.0

    # Detail carving.
    carve_ring_k: int = 3
    snap_tol_factor: float = 0.05  # x bbox diagonal

    # Bilateral normal filter defaults (sigma_c defaults to region mean edge).
    bilateral_sigma_s: float = 0.35
    bilateral_iters: int = 3

    # Handle deformation.
    handle_weight: float = 10.0
    anchor_rings: int = 10

    # Sampling / raster constants.
    voxel_resolution: int = 128
    voxel_stroke_points: int = 3000
    raster_size: int = 256

    # Session.
    undo_depth: int = 32

    def config_hash(self) -> str:
        """Hex digest identifying this configuration (stable field order)."""
        payload = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def with_overrides(self, **kwargs) -> "EngineConfig":
        return replace(self, **kwargs)


DEFAULT_CONFIG = EngineConfig()
