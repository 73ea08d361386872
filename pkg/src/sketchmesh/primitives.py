"""Procedural test/demo geometry."""

from __future__ import annotations

import numpy as np

from .mesh import TriMesh


def grid_patch(nx: int = 10, ny: int = 10, size: float = 1.0) -> TriMesh:
    """Flat z=0 grid of (nx x ny) quads split into triangles, spanning
    [0, size]^2."""
    xs = np.linspace(0.0, size, nx + 1)
    ys = np.linspace(0.0, size, ny + 1)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pos = np.stack([gx.ravel(), gy.ravel(), np.zeros(gx.size)], axis=1)

    def vid(i, j):
        return i * (ny + 1) + j

    faces = []
    for i in range(nx):
        for j in range(ny):
            a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            faces.append((a, b, c))
            faces.append((a, c, d))
    return TriMesh(pos, np.array(faces, dtype=np.int32))


def tetrahedron(scale: float = 1.0) -> TriMesh:
    """Regular tetrahedron centered at the origin (vertices sum to zero)."""
    pos = scale * np.array(
        [[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=np.float64
    ) / np.sqrt(3.0)
    faces = np.array([[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]], dtype=np.int32)
    return TriMesh(pos, faces)


def octahedron(radius: float = 1.0) -> TriMesh:
    pos = radius * np.array(
        [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]],
        dtype=np.float64,
    )
    faces = np.array(
        [
            [0, 2, 4], [2, 1, 4], [1, 3, 4], [3, 0, 4],
            [2, 0, 5], [1, 2, 5], [3, 1, 5], [0, 3, 5],
        ],
        dtype=np.int32,
    )
    return TriMesh(pos, faces)


def cube(size: float = 1.0) -> TriMesh:
    """Axis-aligned cube [0, size]^3, 12 faces, outward orientation."""
    s = size
    pos = np.array(
        [
            [0, 0, 0], [s, 0, 0], [s, s, 0], [0, s, 0],
            [0, 0, s], [s, 0, s], [s, s, s], [0, s, s],
        ],
        dtype=np.float64,
    )
    faces = np.array(
        [
            [0, 2, 1], [0, 3, 2],  # z=0 (down)
            [4, 5, 6], [4, 6, 7],  # z=s (up)
            [0, 1, 5], [0, 5, 4],  # y=0
            [2, 3, 7], [2, 7, 6],  # y=s
            [1, 2, 6], [1, 6, 5],  # x=s
            [3, 0, 4], [3, 4, 7],  # x=0
        ],
        dtype=np.int32,
    )
    return TriMesh(pos, faces)


def icosphere(subdivisions: int = 3, radius: float = 1.0) -> TriMesh:
    """Icosahedron subdivided ``subdivisions`` times, vertices projected to
    the sphere of the given radius."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    pos = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=np.float64,
    )
    pos /= np.linalg.norm(pos, axis=1)[:, None]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    pts = [tuple(p) for p in pos]
    index = {p: i for i, p in enumerate(pts)}

    def mid(a, b):
        m = tuple((np.array(pts[a]) + np.array(pts[b])) / 2.0)
        if m not in index:
            index[m] = len(pts)
            pts.append(m)
        return index[m]

    for _ in range(subdivisions):
        nxt = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            nxt += [(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)]
        faces = nxt
    arr = np.array(pts, dtype=np.float64)
    arr = radius * arr / np.linalg.norm(arr, axis=1)[:, None]
    return TriMesh(arr, np.array(faces, dtype=np.int32))


def circle_polygon(n: int = 64, radius: float = 1.0, center=(0.0, 0.0)) -> np.ndarray:
    """CCW circle sample points (n, 2) for silhouette tests."""
    t = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    return np.stack(
        [center[0] + radius * np.cos(t), center[1] + radius * np.sin(t)], axis=1
    )
