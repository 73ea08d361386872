"""Stage-I initial shape: silhouette triangulation and Laplacian inflation.

A closed user curve in the sketch plane (z = 0) is triangulated, mirror
welded into a thin closed sheet, and inflated by diffusing per-vertex
Laplacian magnitudes from the curve and solving for positions whose
Laplacians match the magnitude-scaled normals. Both solves happen only
here, once per silhouette; later edits go through the refine/deform
modules.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import shapely
from scipy import sparse
from shapely.geometry import Polygon
from shapely.validation import explain_validity

from . import linsolve
from .config import DEFAULT_CONFIG, EngineConfig
from .mesh import (
    MeshError,
    MirrorPlane,
    TriMesh,
    laplacian,
    mirror_weld,
    split_marked_edges,
    vertex_areas,
    vertex_normals,
)


class CurveError(ValueError):
    """Invalid silhouette curve."""


@dataclass(frozen=True)
class SilhouetteCurve:
    """Closed, simple, counterclockwise polygon in the sketch plane.

    Cleanup at construction drops duplicate consecutive points and an
    explicit closing point, enforces CCW orientation, and resamples to
    uniform edge length ``resample_len`` (default: bbox diagonal / 64).
    Raw curves need at least 8 distinct points.
    """

    points2d: np.ndarray
    resample_len: float

    def __init__(self, points2d, resample_len: float | None = None):
        pts = np.atleast_2d(np.asarray(points2d, dtype=np.float64))
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise CurveError(f"expected (n, 2) points, got {pts.shape}")
        pts = _dedupe(pts)
        if len(pts) >= 2 and np.allclose(pts[0], pts[-1]):
            pts = pts[:-1]
        if len(pts) < 8:
            raise CurveError(f"need at least 8 distinct points, got {len(pts)}")
        if _signed_area(pts) < 0:
            pts = pts[::-1]
        poly = Polygon(pts)
        if not poly.is_valid or not poly.is_simple:
            raise CurveError(f"curve is not simple: {explain_validity(poly)}")
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        diag = float(np.linalg.norm(hi - lo))
        if resample_len is None:
            resample_len = diag / 64.0
        if resample_len <= 0:
            raise CurveError("resample_len must be positive")
        pts = _resample_closed(pts, resample_len)
        poly = Polygon(pts)
        if not poly.is_valid or not poly.is_simple:
            raise CurveError(
                f"curve self-intersects after resampling: {explain_validity(poly)}"
            )
        pts.setflags(write=False)
        object.__setattr__(self, "points2d", pts)
        object.__setattr__(self, "resample_len", float(resample_len))

    @property
    def bbox_diagonal(self) -> float:
        lo = self.points2d.min(axis=0)
        hi = self.points2d.max(axis=0)
        return float(np.linalg.norm(hi - lo))


def _dedupe(pts: np.ndarray) -> np.ndarray:
    keep = [0]
    for i in range(1, len(pts)):
        if not np.array_equal(pts[i], pts[keep[-1]]):
            keep.append(i)
    return pts[keep]


def _signed_area(pts: np.ndarray) -> float:
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _cross2(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]


def _resample_closed(pts: np.ndarray, target_len: float) -> np.ndarray:
    closed = np.vstack([pts, pts[:1]])
    seg = np.linalg.norm(np.diff(closed, axis=0), axis=1)
    total = seg.sum()
    # ceil: resampled edges never exceed target_len, so interior refinement
    # to the same threshold leaves the boundary untouched
    k = max(8, int(np.ceil(total / target_len)))
    stations = np.arange(k) * (total / k)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    idx = np.clip(np.searchsorted(cum, stations, side="right") - 1, 0, len(seg) - 1)
    t = (stations - cum[idx]) / seg[idx]
    return closed[idx] + t[:, None] * (closed[idx + 1] - closed[idx])


# ----------------------------------------------------------------------
# triangulation


def triangulate_polygon(points2d, max_edge: float | None = None) -> TriMesh:
    """Constrained Delaunay triangulation of a simple CCW polygon, with
    interior Steiner points inserted until no edge exceeds ``max_edge``.

    The planar result lives in z = 0 with +z face normals; its boundary is
    exactly the input polygon (refinement midpoints stay on polygon edges
    or strictly inside). Total triangle area equals the polygon area.

    Refinement first tries a hexagonal interior lattice at the target
    spacing (near-uniform triangles); if the unconstrained Delaunay of
    boundary + lattice fails to conform to the polygon (thin necks), it
    falls back to the exact CDT refined by conforming midpoint splits.
    """
    if isinstance(points2d, SilhouetteCurve):
        points2d = points2d.points2d
    pts = np.asarray(points2d, dtype=np.float64)
    if _signed_area(pts) < 0:
        raise CurveError("polygon must be counterclockwise")
    poly = Polygon(pts)
    if not poly.is_valid or not poly.is_simple:
        raise CurveError(f"polygon is not simple: {explain_validity(poly)}")
    mesh = None
    if max_edge is not None:
        # slightly denser lattice leaves room for the relaxation pass to
        # stretch edges without breaking the max-edge contract
        mesh = _lattice_triangulation(pts, poly, 0.75 * max_edge)
        if mesh is not None:
            mesh = _relax_planar(mesh)
    if mesh is None:
        mesh = _cdt(pts, poly)
    if max_edge is not None:
        mesh = _refine_to_edge_length(mesh, max_edge)
    return mesh


def _cdt(pts: np.ndarray, poly: Polygon) -> TriMesh:
    tris = shapely.constrained_delaunay_triangles(poly)
    index = {(float(x), float(y)): i for i, (x, y) in enumerate(pts)}
    faces = []
    for tri in tris.geoms:
        ring = list(tri.exterior.coords)[:3]
        ids = []
        for x, y in ring:
            key = (float(x), float(y))
            if key not in index:
                raise CurveError("triangulator introduced an unexpected vertex")
            ids.append(index[key])
        a, b, c = ids
        if _signed_area(pts[[a, b, c]]) < 0:
            a, b, c = a, c, b
        faces.append((a, b, c))
    positions = np.column_stack([pts, np.zeros(len(pts))])
    return TriMesh(positions, np.array(faces, dtype=np.int32))


def _lattice_triangulation(
    pts: np.ndarray, poly: Polygon, spacing: float
) -> TriMesh | None:
    """Delaunay of boundary + interior hex lattice; None when the result
    does not conform to the polygon."""
    from scipy.spatial import Delaunay, QhullError

    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    dy = spacing * np.sqrt(3.0) / 2.0
    xs = np.arange(lo[0], hi[0] + spacing, spacing)
    ys = np.arange(lo[1], hi[1] + dy, dy)
    if len(xs) * len(ys) > 4_000_000:
        return None
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    gx = gx + (np.arange(len(ys)) % 2)[None, :] * (spacing / 2.0)
    cand = np.stack([gx.ravel(), gy.ravel()], axis=1)
    shrunk = poly.buffer(-0.65 * spacing)
    if shrunk.is_empty:
        interior = np.zeros((0, 2))
    else:
        mask = shapely.contains_xy(shrunk, cand[:, 0], cand[:, 1])
        interior = cand[mask]
    allpts = np.vstack([pts, interior])
    try:
        dt = Delaunay(allpts)
    except QhullError:
        return None
    tri_pts = allpts[dt.simplices]
    centroids = tri_pts.mean(axis=1)
    keep = shapely.contains_xy(poly, centroids[:, 0], centroids[:, 1])
    # collinear boundary runs produce zero-area hull slivers; they cover
    # nothing, drop them before judging conformity
    cross = _cross2(
        tri_pts[:, 1] - tri_pts[:, 0], tri_pts[:, 2] - tri_pts[:, 0]
    )
    keep &= 0.5 * np.abs(cross) > 1e-12 * max(poly.area, 1.0)
    faces = dt.simplices[keep]
    # conformity: every polygon edge present, covered area exact
    k = len(pts)
    edge_set = set()
    for a, b, c in faces:
        for u, v in ((a, b), (b, c), (c, a)):
            edge_set.add((min(u, v), max(u, v)))
    for i in range(k):
        j = (i + 1) % k
        if (min(i, j), max(i, j)) not in edge_set:
            return None
    areas = 0.5 * np.abs(cross[keep])
    if abs(areas.sum() - poly.area) > 1e-9 * max(poly.area, 1.0):
        return None
    # orient CCW
    flip = (
        _cross2(
            allpts[faces[:, 1]] - allpts[faces[:, 0]],
            allpts[faces[:, 2]] - allpts[faces[:, 0]],
        )
        < 0
    )
    faces[flip] = faces[flip][:, ::-1]
    used = np.unique(faces)
    if len(used) < len(allpts):  # drop lattice points that ended up unused
        remap = np.full(len(allpts), -1, dtype=np.int64)
        remap[used] = np.arange(len(used))
        allpts = allpts[used]
        faces = remap[faces]
    positions = np.column_stack([allpts, np.zeros(len(allpts))])
    return TriMesh(positions, np.array(faces, dtype=np.int32))


def _relax_planar(mesh: TriMesh, iters: int = 30) -> TriMesh:
    """Move interior vertices to their neighbor means (boundary fixed):
    equalizes the lattice-to-boundary transition band so downstream solves
    see azimuthally uniform stencils. Skipped if any face would invert."""
    on_boundary = np.zeros(mesh.n_vertices, dtype=bool)
    for loop in mesh.boundary_loops:
        on_boundary[loop] = True
    pos = mesh.positions.copy()
    adj = mesh.adjacency
    deg = np.asarray(adj.sum(axis=1)).ravel()
    interior = ~on_boundary
    if not interior.any():
        return mesh
    for _ in range(iters):
        mean = adj @ pos / deg[:, None]
        pos[interior] = mean[interior]
    t = mesh.faces
    orient = _cross2(
        (pos[t[:, 1]] - pos[t[:, 0]])[:, :2], (pos[t[:, 2]] - pos[t[:, 0]])[:, :2]
    )
    if orient.min() <= 0:
        return mesh
    return mesh.with_positions(pos)


def _refine_to_edge_length(mesh: TriMesh, max_edge: float, max_passes: int = 32) -> TriMesh:
    for _ in range(max_passes):
        e = mesh.edges
        lens = np.linalg.norm(mesh.positions[e[:, 0]] - mesh.positions[e[:, 1]], axis=1)
        long = e[lens > max_edge]
        if len(long) == 0:
            return mesh
        mesh, _ = split_marked_edges(mesh, map(tuple, long))
    warnings.warn("edge-length refinement did not converge; returning best effort")
    return mesh


def split_all_boundary_faces(mesh: TriMesh) -> TriMesh:
    """Split faces whose three corners all lie on the open boundary (such
    faces would mirror onto themselves during welding). Marks each
    offender's longest interior (chord) edge; iterates until none remain."""
    while True:
        on_boundary = np.zeros(mesh.n_vertices, dtype=bool)
        for loop in mesh.boundary_loops:
            on_boundary[loop] = True
        t = mesh.faces
        offender = on_boundary[t].all(axis=1)
        if not offender.any():
            return mesh
        boundary_edges = {
            tuple(e) for e in mesh.edges[mesh.edge_face_count == 1].tolist()
        }
        marked = set()
        for a, b, c in t[offender]:
            best, best_len = None, -1.0
            for u, v in ((a, b), (b, c), (c, a)):
                key = tuple(sorted((int(u), int(v))))
                if key in boundary_edges:
                    continue  # polygon edge; its midpoint would stay on the curve
                length = float(np.linalg.norm(mesh.positions[u] - mesh.positions[v]))
                if length > best_len:
                    best, best_len = key, length
            if best is None:
                raise MeshError("face bounded by three silhouette edges; curve too coarse")
            marked.add(best)
        mesh, _ = split_marked_edges(mesh, marked)


# ----------------------------------------------------------------------
# magnitude diffusion and position solve


@dataclass(frozen=True)
class LMField:
    """Per-vertex Laplacian magnitudes plus the constrained subset."""

    values: np.ndarray
    constrained: dict

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise ValueError("magnitudes must be finite")


def diffuse_magnitudes(
    mesh: TriMesh, constrained: dict, config: EngineConfig = DEFAULT_CONFIG
) -> LMField:
    """Spread prescribed magnitudes from the constrained vertices over the
    mesh: minimizes sum ||L(m)||^2 (rows on unconstrained vertices) plus the
    soft constraint residuals."""
    if not constrained:
        raise ValueError("need at least one constrained vertex")
    n = mesh.n_vertices
    cidx = np.array(sorted(constrained), dtype=np.int64)
    if cidx.min() < 0 or cidx.max() >= n:
        raise ValueError("constrained vertex out of range")
    cval = np.array([float(constrained[int(i)]) for i in cidx])
    lap = laplacian(mesh, config.laplacian_weighting)
    free = np.setdiff1d(np.arange(n), cidx)
    sel = sparse.csr_matrix(
        (np.full(len(cidx), config.constraint_weight), (np.arange(len(cidx)), cidx)),
        shape=(len(cidx), n),
    )
    a = sparse.vstack([lap[free], sel], format="csr")
    b = np.concatenate([np.zeros(len(free)), config.constraint_weight * cval])
    values = linsolve.least_squares(a, b)
    return LMField(values=values, constrained=dict(constrained))


def target_laplacians(mesh: TriMesh, lm: LMField) -> np.ndarray:
    """Per-vertex target differential coordinates: area * magnitude * normal."""
    areas = vertex_areas(mesh)
    normals = vertex_normals(mesh)
    return areas[:, None] * np.asarray(lm.values)[:, None] * normals


def solve_positions(
    mesh: TriMesh,
    delta: np.ndarray,
    pinned: dict,
    config: EngineConfig = DEFAULT_CONFIG,
) -> TriMesh:
    """Solve for positions whose Laplacians match ``delta`` on free vertices
    while pinned vertices stay (softly) at their prescribed points.
    Connectivity is unchanged."""
    if not pinned:
        raise ValueError("need at least one pinned vertex")
    n = mesh.n_vertices
    delta = np.asarray(delta, dtype=np.float64)
    if delta.shape != (n, 3):
        raise ValueError(f"delta must be (n, 3), got {delta.shape}")
    cidx = np.array(sorted(pinned), dtype=np.int64)
    cpos = np.array([pinned[int(i)] for i in cidx], dtype=np.float64)
    lap = laplacian(mesh, config.laplacian_weighting)
    free = np.setdiff1d(np.arange(n), cidx)
    w = config.constraint_weight
    sel = sparse.csr_matrix(
        (np.full(len(cidx), w), (np.arange(len(cidx)), cidx)), shape=(len(cidx), n)
    )
    a = sparse.vstack([lap[free], sel], format="csr")
    b = np.vstack([delta[free], w * cpos])
    positions = linsolve.least_squares(a, b)
    return mesh.with_positions(positions)


def generate_initial(
    curve: SilhouetteCurve,
    lm_default: float | None = None,
    config: EngineConfig = DEFAULT_CONFIG,
) -> TriMesh:
    """Full Stage-I pipeline: triangulate, mirror weld across the sketch
    plane, diffuse magnitudes from the silhouette, and inflate.

    The output is reflection-symmetric across z = 0 and its side-view
    outline stays within the soft-constraint slack of the input curve.
    """
    diag = curve.bbox_diagonal
    if lm_default is None:
        lm_default = config.lm_default_factor * diag
    try:
        planar = triangulate_polygon(curve.points2d, max_edge=curve.resample_len)
        planar = split_all_boundary_faces(planar)
    except (CurveError, MeshError) as exc:
        raise MeshError(f"[triangulate] {exc}") from exc
    try:
        welded = mirror_weld(
            planar,
            MirrorPlane(axis=2, position=0.0),
            thickness_offset=config.weld_thickness_factor * diag,
        )
    except MeshError as exc:
        raise MeshError(f"[mirror_weld] {exc}") from exc
    n_curve = len(curve.points2d)
    constrained = {i: lm_default for i in range(n_curve)}
    try:
        lm = diffuse_magnitudes(welded, constrained, config)
        delta = target_laplacians(welded, lm)
        pinned = {i: welded.positions[i] for i in range(n_curve)}
        inflated = solve_positions(welded, delta, pinned, config)
    except (ValueError, linsolve.RankDeficiencyError) as exc:
        raise MeshError(f"[inflate] {exc}") from exc
    return inflated
