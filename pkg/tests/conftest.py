import numpy as np
import pytest

from sketchmesh.config import DEFAULT_CONFIG
from sketchmesh.mesh import TriMesh
from sketchmesh.primitives import icosphere

# coarse settings keep interactive-pipeline tests fast; the config hash is
# embedded in logs, so replay tests stay self-consistent
COARSE_CONFIG = DEFAULT_CONFIG.with_overrides(resample_factor=1.0 / 24.0)


@pytest.fixture(scope="session")
def sphere2() -> TriMesh:
    return icosphere(2)


@pytest.fixture(scope="session")
def sphere3() -> TriMesh:
    return icosphere(3)


def hemisphere(rings: int = 8, segments: int = 24) -> TriMesh:
    """Upper hemisphere with its boundary ring exactly on z = 0."""
    pos = [(0.0, 0.0, 1.0)]
    for j in range(1, rings + 1):
        theta = np.pi / 2 * j / rings
        z = float(np.cos(theta))
        if j == rings:
            z = 0.0
        r = float(np.sin(theta))
        for k in range(segments):
            phi = 2 * np.pi * k / segments
            pos.append((r * np.cos(phi), r * np.sin(phi), z))
    faces = []
    for k in range(segments):
        faces.append((0, 1 + k, 1 + (k + 1) % segments))
    for j in range(1, rings):
        a0 = 1 + (j - 1) * segments
        b0 = 1 + j * segments
        for k in range(segments):
            k1 = (k + 1) % segments
            faces.append((a0 + k, b0 + k, b0 + k1))
            faces.append((a0 + k, b0 + k1, a0 + k1))
    return TriMesh(np.array(pos), np.array(faces, dtype=np.int32))


def noisy_grid(nx: int = 16, ny: int = 16, sigma_rel: float = 0.01, seed: int = 7):
    """Flat grid plus vertical noise of sigma_rel x bbox diagonal."""
    from sketchmesh.primitives import grid_patch

    flat = grid_patch(nx, ny)
    rng = np.random.default_rng(seed)
    sigma = sigma_rel * flat.bbox_diagonal
    pos = flat.positions.copy()
    pos[:, 2] += rng.normal(scale=sigma, size=len(pos))
    return flat, flat.with_positions(pos)
