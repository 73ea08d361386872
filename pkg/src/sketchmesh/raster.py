"""Software orthographic rasterizer for the detail-stage image stack.

Produces the 256x256 inputs an external detail predictor consumes: the
contour/sketch image S, normal map N, and front/back depth maps D_f/D_b.
Front and back share one pixel frame (a square fit around the mesh bbox
with 5% margin), so a surface point projects to the same pixel in every
map. Depths are normalized near -> far to [0, 1] with background exactly
1.0; the back map keeps the farthest surface, measured from the back
plane, in that same shared frame (a mirrored camera with its columns
re-aligned gives the identical image).

Deterministic by construction: plain float64 arithmetic, no device state.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .mesh import TriMesh, vertex_normals

SMIS_MAGIC = b"SMIS"
SMIS_VERSION = 1


@dataclass(frozen=True)
class RasterImage:
    """Pixel grid with a channel meaning tag ("depth", "normal", "mask")."""

    data: np.ndarray
    kind: str

    def __post_init__(self):
        if self.data.ndim not in (2, 3) or min(self.data.shape[:2]) < 1:
            raise ValueError("image must be (h, w) or (h, w, c) with positive dims")
        self.data.setflags(write=False)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class OrthoCamera:
    """Shared orthographic frame: square in (x, y) around the mesh, depth
    planes perpendicular to z. ``view`` picks which depth map the renderer
    produces; the pixel mapping is identical for both."""

    view: str
    center: tuple
    half_width: float
    z_near: float  # front plane (max z side)
    z_far: float   # back plane (min z side)

    @staticmethod
    def fit(mesh: TriMesh, view: str = "front", margin: float = 0.05) -> "OrthoCamera":
        if view not in ("front", "back"):
            raise ValueError("view must be 'front' or 'back'")
        lo, hi = mesh.bbox
        cx, cy = (lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0
        extent = max(hi[0] - lo[0], hi[1] - lo[1], 1e-12)
        half = extent * (1.0 + margin) / 2.0
        zext = max(hi[2] - lo[2], 1e-12)
        return OrthoCamera(
            view=view,
            center=(float(cx), float(cy)),
            half_width=float(half),
            z_near=float(hi[2] + margin * zext),
            z_far=float(lo[2] - margin * zext),
        )

    def flipped(self) -> "OrthoCamera":
        other = "back" if self.view == "front" else "front"
        return OrthoCamera(other, self.center, self.half_width, self.z_near, self.z_far)

    def pixels_of(self, points: np.ndarray, size: int) -> np.ndarray:
        """Continuous pixel coordinates (col, row) of world points."""
        p = np.atleast_2d(points)
        u = (p[:, 0] - self.center[0]) / (2 * self.half_width) + 0.5
        v = (p[:, 1] - self.center[1]) / (2 * self.half_width) + 0.5
        col = u * size - 0.5
        row = (1.0 - v) * size - 0.5
        return np.stack([col, row], axis=1)

    def normalized_depth(self, z: np.ndarray) -> np.ndarray:
        rng = self.z_near - self.z_far
        if self.view == "front":
            return (self.z_near - z) / rng
        return (z - self.z_far) / rng


def _rasterize(mesh: TriMesh, cam: OrthoCamera, size: int, attrs: np.ndarray | None):
    """Core z-buffer pass. Returns (depth(h, w) normalized, attr(h, w, c),
    cover(h, w) bool). ``attrs`` are per-vertex values interpolated at the
    winning surface point."""
    want_far = cam.view == "back"
    zbuf = np.full((size, size), -np.inf if not want_far else np.inf)
    cover = np.zeros((size, size), dtype=bool)
    nc = attrs.shape[1] if attrs is not None else 0
    abuf = np.zeros((size, size, nc)) if nc else None
    pix = cam.pixels_of(mesh.positions, size)
    zs = mesh.positions[:, 2]
    for f in mesh.faces:
        p0, p1, p2 = pix[f[0]], pix[f[1]], pix[f[2]]
        xmin = max(int(np.ceil(min(p0[0], p1[0], p2[0]))), 0)
        xmax = min(int(np.floor(max(p0[0], p1[0], p2[0]))), size - 1)
        ymin = max(int(np.ceil(min(p0[1], p1[1], p2[1]))), 0)
        ymax = min(int(np.floor(max(p0[1], p1[1], p2[1]))), size - 1)
        if xmin > xmax or ymin > ymax:
            continue
        denom = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1])
        if denom == 0.0:
            continue
        gx, gy = np.meshgrid(
            np.arange(xmin, xmax + 1), np.arange(ymin, ymax + 1), indexing="xy"
        )
        w1 = ((gx - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (gy - p0[1])) / denom
        w2 = ((p1[0] - p0[0]) * (gy - p0[1]) - (gx - p0[0]) * (p1[1] - p0[1])) / denom
        w0 = 1.0 - w1 - w2
        inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
        if not inside.any():
            continue
        z = w0 * zs[f[0]] + w1 * zs[f[1]] + w2 * zs[f[2]]
        block = zbuf[ymin : ymax + 1, xmin : xmax + 1]
        if want_far:
            better = inside & (z < block)
        else:
            better = inside & (z > block)
        if not better.any():
            continue
        block[better] = z[better]
        cover[ymin : ymax + 1, xmin : xmax + 1][better] = True
        if nc:
            vals = (
                w0[..., None] * attrs[f[0]]
                + w1[..., None] * attrs[f[1]]
                + w2[..., None] * attrs[f[2]]
            )
            abuf[ymin : ymax + 1, xmin : xmax + 1][better] = vals[better]
    depth = np.ones((size, size))
    if cover.any():
        depth[cover] = cam.normalized_depth(zbuf[cover])
    return depth, abuf, cover


def render_depth(mesh: TriMesh, cam: OrthoCamera, size: int = 256) -> RasterImage:
    """Z-buffered orthographic depth; background pixels exactly 1.0."""
    if mesh.n_faces == 0:
        return RasterImage(np.ones((size, size)), kind="depth")
    depth, _, _ = _rasterize(mesh, cam, size, None)
    return RasterImage(depth, kind="depth")


def render_normals(mesh: TriMesh, cam: OrthoCamera, size: int = 256) -> RasterImage:
    """Interpolated world-space unit normals of the visible surface;
    background pixels are (0, 0, 0)."""
    if mesh.n_faces == 0:
        return RasterImage(np.zeros((size, size, 3)), kind="normal")
    normals = vertex_normals(mesh)
    _, abuf, cover = _rasterize(mesh, cam, size, normals)
    ln = np.linalg.norm(abuf, axis=2)
    ln[ln < 1e-300] = 1.0
    out = abuf / ln[..., None]
    out[~cover] = 0.0
    return RasterImage(out, kind="normal")


def render_contours(
    mesh: TriMesh, cam: OrthoCamera, strokes=(), size: int = 256
) -> RasterImage:
    """Occluding contours (edges where face front/back classification
    flips) plus the projected user strokes, as a binary image."""
    img = np.zeros((size, size), dtype=bool)
    if mesh.n_faces:
        sign_toward = 1.0 if cam.view == "front" else -1.0
        facing = sign_toward * mesh.face_normals[:, 2] > 0
        n = mesh.n_vertices
        he = np.sort(mesh.halfedges, axis=1)
        keys = he[:, 0].astype(np.int64) * n + he[:, 1]
        face_of = np.tile(np.arange(mesh.n_faces), 3)
        order = np.argsort(keys, kind="stable")
        ks, fs = keys[order], face_of[order]
        pix = cam.pixels_of(mesh.positions, size)
        i = 0
        while i < len(ks):
            j = i + 1
            while j < len(ks) and ks[j] == ks[i]:
                j += 1
            if j - i == 2 and facing[fs[i]] != facing[fs[i + 1]]:
                u, v = int(ks[i] // n), int(ks[i] % n)
                _draw_line(img, pix[u], pix[v])
            i = j
    for stroke in strokes:
        pix = cam.pixels_of(np.asarray(stroke.points), size)
        for a, b in zip(pix[:-1], pix[1:]):
            _draw_line(img, a, b)
    return RasterImage(img.astype(np.float64), kind="mask")


def _draw_line(img: np.ndarray, a, b) -> None:
    size = img.shape[0]
    x0, y0 = int(round(a[0])), int(round(a[1]))
    x1, y1 = int(round(b[0])), int(round(b[1]))
    steps = max(abs(x1 - x0), abs(y1 - y0), 1)
    ts = np.arange(steps + 1) / steps
    xs = np.round(x0 + ts * (x1 - x0)).astype(int)
    ys = np.round(y0 + ts * (y1 - y0)).astype(int)
    ok = (xs >= 0) & (xs < size) & (ys >= 0) & (ys < size)
    img[ys[ok], xs[ok]] = True


# ----------------------------------------------------------------------
# detail-input stack (SMIS file)


@dataclass(frozen=True)
class DetailStack:
    """256x256x6 channel stack in fixed order: S(1), N(3), D_f(1), D_b(1)."""

    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[2] != 6:
            raise ValueError(f"stack must be (h, w, 6), got {self.data.shape}")
        self.data.setflags(write=False)


def compose_detail_input(
    sketch: RasterImage,
    normals: RasterImage,
    depth_front: RasterImage,
    depth_back: RasterImage,
) -> DetailStack:
    shapes = {
        sketch.data.shape[:2],
        normals.data.shape[:2],
        depth_front.data.shape[:2],
        depth_back.data.shape[:2],
    }
    if len(shapes) != 1:
        raise ValueError(f"image dimensions differ: {sorted(shapes)}")
    if normals.data.ndim != 3 or normals.data.shape[2] != 3:
        raise ValueError("normal map must have 3 channels")
    stack = np.concatenate(
        [
            sketch.data[..., None],
            normals.data,
            depth_front.data[..., None],
            depth_back.data[..., None],
        ],
        axis=2,
    ).astype(np.float64)
    return DetailStack(stack)


def save_stack(stack: DetailStack, path) -> None:
    """SMIS: magic, u32 version, u32 w h channels, f32 row-major
    channel-interleaved, little-endian."""
    h, w, c = stack.data.shape
    with open(path, "wb") as fh:
        fh.write(SMIS_MAGIC)
        fh.write(struct.pack("<IIII", SMIS_VERSION, w, h, c))
        fh.write(np.ascontiguousarray(stack.data, dtype="<f4").tobytes())


def load_stack(path) -> DetailStack:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != SMIS_MAGIC:
            raise ValueError(f"not an image stack file (magic {magic!r})")
        version, w, h, c = struct.unpack("<IIII", fh.read(16))
        if version != SMIS_VERSION:
            raise ValueError(f"unsupported stack version {version}")
        data = np.frombuffer(fh.read(w * h * c * 4), dtype="<f4")
        if data.size != w * h * c:
            raise ValueError("truncated stack file")
    return DetailStack(data.astype(np.float64).reshape(h, w, c))


# ----------------------------------------------------------------------
# plain-image export for inspection


def write_pgm(image: RasterImage, path) -> None:
    data = np.clip(image.data, 0.0, 1.0)
    gray = (data * 255.0).round().astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{gray.shape[1]} {gray.shape[0]}\n255\n".encode())
        fh.write(gray.tobytes())


def write_ppm(image: RasterImage, path) -> None:
    data = image.data
    if data.ndim != 3 or data.shape[2] != 3:
        raise ValueError("PPM export needs a 3-channel image")
    rgb = (np.clip((data + 1.0) / 2.0, 0.0, 1.0) * 255.0).round().astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{rgb.shape[1]} {rgb.shape[0]}\n255\n".encode())
        fh.write(rgb.tobytes())
