"""Implicit-guided mesh refinement.

The explicit mesh is pulled onto an occupancy field's 0.5 level set in two
moves: a per-vertex 1-D walk along the (frozen) normal with a halving step
schedule, then a smoothness-regularized least-squares fit to the walked
targets. Stage I applies both globally; Stage II restricts them to the
patches around on-surface strokes and cleans the seams with bilateral
normal filtering.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from . import linsolve
from .config import DEFAULT_CONFIG, EngineConfig
from .fields import OccupancyField, eval_clamped
from .mesh import (
    MeshError,
    TriMesh,
    VertexRegion,
    bilateral_normal_filter,
    graph_distances,
    k_ring,
    laplacian,
    midpoint_subdivide,
    vertex_normals,
)
from .stroke import Stroke

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ProjectionSchedule:
    """Walk schedule: ``iters`` steps, initial length ``step0`` (model
    units), halving ``ratio`` applied on every inside/outside sign flip,
    occupancy threshold ``alpha``."""

    iters: int = 5
    step0: float = 0.1
    ratio: float = 0.5
    alpha: float = 0.5

    def __post_init__(self):
        if self.iters < 1:
            raise ValueError("iters must be >= 1")
        if not 0.0 < self.ratio < 1.0:
            raise ValueError("ratio must be in (0, 1)")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must be in (0, 1)")

    @staticmethod
    def from_config(config: EngineConfig) -> "ProjectionSchedule":
        return ProjectionSchedule(
            iters=config.projection_iters,
            step0=config.projection_step0,
            ratio=config.projection_ratio,
            alpha=config.occupancy_alpha,
        )


@dataclass(frozen=True)
class FitParams:
    """Smoothness weight and the (optional) vertex region to fit; vertices
    outside the region act as hard boundary conditions."""

    lam: float
    region: VertexRegion | None = None

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")


def project_to_isosurface(
    mesh: TriMesh,
    field: OccupancyField,
    sched: ProjectionSchedule | None = None,
    region: VertexRegion | None = None,
    normals: np.ndarray | None = None,
    sign_convention: str = "toward_surface",
    recompute_normals: bool = False,
) -> np.ndarray:
    """Per-vertex target positions from the 1-D isosurface walk.

    Each vertex moves along its own normal ray, step d, direction
    sign(f(v) - alpha); d halves whenever the current nonzero sign differs
    from the last nonzero sign (a surface penetration). sign(0) = 0 holds
    the vertex, and since the field is deterministic a held vertex stays
    held. Normals are computed once on entry and frozen for the whole
    schedule (each vertex stays on a ray, so a scalar simulation of the
    same schedule reproduces the trajectory exactly); ``recompute_normals``
    re-evaluates them each iteration instead.

    Vertices outside ``region`` are returned unchanged. Points leaving the
    field bbox are evaluated at the clamped position and flagged via a log
    warning.
    """
    if sched is None:
        sched = ProjectionSchedule()
    if sign_convention not in ("toward_surface", "as_printed"):
        raise ValueError(f"unknown sign convention {sign_convention!r}")
    orient = 1.0 if sign_convention == "toward_surface" else -1.0
    v = mesh.positions.copy()
    if region is None:
        active = np.arange(mesh.n_vertices)
    else:
        active = np.array(sorted(region.members), dtype=np.int64)
        if active.size == 0:
            return v
    if normals is None:
        normals = vertex_normals(mesh)
    normals = np.asarray(normals, dtype=np.float64)
    n_act = normals[active].copy()
    d = np.full(len(active), sched.step0)
    last_sign = np.zeros(len(active))
    clamped_any = False
    for _ in range(sched.iters):
        occ, clamped = eval_clamped(field, v[active])
        clamped_any |= clamped
        s = np.sign(occ - sched.alpha)
        flip = (s != 0.0) & (last_sign != 0.0) & (s != last_sign)
        d[flip] *= sched.ratio
        v[active] += (orient * d * s)[:, None] * n_act
        last_sign = np.where(s != 0.0, s, last_sign)
        if recompute_normals:
            n_full = vertex_normals(mesh.with_positions(v))
            n_act = n_full[active]
    if clamped_any:
        logger.warning("projection left the field bbox; evaluations were clamped")
    return v


def fit_with_smoothness(
    mesh: TriMesh,
    targets: np.ndarray,
    params: FitParams,
    config: EngineConfig = DEFAULT_CONFIG,
) -> TriMesh:
    """Least-squares fit to per-vertex targets with Laplacian smoothing:
    minimizes lam * sum ||L(v)||^2 + sum ||v - v'||^2 over the region,
    outside-region vertices pinned hard.

    Solved in displacement form (unknown u = v - v0), which keeps the
    solver's tiny diagonal regularization biased toward the input rather
    than the origin; lam = 0 returns the targets exactly.
    """
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != (mesh.n_vertices, 3):
        raise ValueError(f"targets must be (n, 3), got {targets.shape}")
    if not np.all(np.isfinite(targets)):
        raise ValueError("targets must be finite")
    if params.region is None:
        ridx = np.arange(mesh.n_vertices)
    else:
        ridx = np.array(sorted(params.region.members), dtype=np.int64)
        if ridx.size == 0:
            return mesh
    if params.lam == 0.0:
        out = mesh.positions.copy()
        out[ridx] = targets[ridx]
        return mesh.with_positions(out)
    lap = laplacian(mesh, config.laplacian_weighting)
    v0 = mesh.positions
    nr = len(ridx)
    l_rr = lap[ridx][:, ridx]
    sq = np.sqrt(params.lam)
    a = sparse.vstack([sq * l_rr, sparse.identity(nr, format="csr")], format="csr")
    lv0 = lap[ridx] @ v0
    b = np.vstack([-sq * lv0, targets[ridx] - v0[ridx]])
    u = linsolve.least_squares(a, b)
    out = v0.copy()
    out[ridx] = v0[ridx] + u
    return mesh.with_positions(out)


def refine_coarse(
    mesh: TriMesh,
    field: OccupancyField,
    sched: ProjectionSchedule | None = None,
    lam: float | None = None,
    config: EngineConfig = DEFAULT_CONFIG,
) -> TriMesh:
    """Stage-I refinement: project every vertex onto the field's level set,
    then fit with global smoothing (one outer round by default)."""
    if sched is None:
        sched = ProjectionSchedule.from_config(config)
    if lam is None:
        lam = config.lambda_coarse
    out = mesh
    for _ in range(max(1, config.outer_rounds)):
        targets = project_to_isosurface(
            out,
            field,
            sched,
            sign_convention=config.sign_convention,
            recompute_normals=config.recompute_normals,
        )
        out = fit_with_smoothness(out, targets, FitParams(lam=lam), config)
    return out


def snap_stroke_to_vertices(
    mesh: TriMesh, stroke: Stroke, snap_tol: float
) -> np.ndarray:
    """Nearest mesh vertex per stroke point (lowest index wins ties),
    consecutive duplicates collapsed. Errors if any point is farther than
    ``snap_tol`` from its nearest vertex."""
    pts = stroke.points
    ids = np.empty(len(pts), dtype=np.int64)
    for i, p in enumerate(pts):
        d2 = np.einsum("ij,ij->i", mesh.positions - p, mesh.positions - p)
        j = int(np.argmin(d2))
        dist = float(np.sqrt(d2[j]))
        if dist > snap_tol:
            raise MeshError(
                f"stroke point {i} is {dist:.4g} from the surface "
                f"(snap tolerance {snap_tol:.4g})"
            )
        ids[i] = j
    collapsed = [int(ids[0])]
    for j in ids[1:]:
        if int(j) != collapsed[-1]:
            collapsed.append(int(j))
    return np.array(collapsed, dtype=np.int64)


def carve_details(
    mesh: TriMesh,
    strokes,
    detail_field: OccupancyField,
    ring_k: int | None = None,
    lam: float | None = None,
    snap_tol: float | None = None,
    sched: ProjectionSchedule | None = None,
    config: EngineConfig = DEFAULT_CONFIG,
) -> TriMesh:
    """Stage-II detail carving around on-surface strokes.

    The union of ``ring_k``-ring neighborhoods of the stroke-adjacent
    vertices is densified by midpoint subdivision, projected onto the
    detail field, fitted with the detail smoothness weight, and the seam
    (region boundary plus its 1-ring outside band) is cleaned with
    bilateral normal filtering. Vertices outside region + band are
    bitwise unchanged; an empty stroke list is the identity.
    """
    strokes = list(strokes)
    if not strokes:
        return mesh
    if ring_k is None:
        ring_k = config.carve_ring_k
    if lam is None:
        lam = config.lambda_detail
    if snap_tol is None:
        snap_tol = config.snap_tol_factor * mesh.bbox_diagonal
    if sched is None:
        sched = ProjectionSchedule.from_config(config)
    seeds: set[int] = set()
    for idx, stroke in enumerate(strokes):
        try:
            ids = snap_stroke_to_vertices(mesh, stroke, snap_tol)
        except MeshError as exc:
            raise MeshError(f"stroke {idx}: {exc}") from exc
        seeds.update(int(v) for v in ids)
    region = VertexRegion.from_members(mesh, k_ring(mesh, seeds, ring_k))
    dense, region = midpoint_subdivide(mesh, region)
    targets = project_to_isosurface(
        dense,
        detail_field,
        sched,
        region=region,
        sign_convention=config.sign_convention,
        recompute_normals=config.recompute_normals,
    )
    fitted = fit_with_smoothness(dense, targets, FitParams(lam=lam, region=region), config)
    # seam cleanup strictly outside the carved region: the band is the two
    # vertex rings surrounding it (one ring alone has no interior faces for
    # the filter to act on)
    ring1 = set()
    for v in region.boundary_ring:
        ring1.update(int(u) for u in fitted.neighbors(int(v)))
    ring1 -= region.members
    band = set(ring1)
    for v in ring1:
        band.update(int(u) for u in fitted.neighbors(v))
    band -= region.members
    band_region = VertexRegion.from_members(fitted, band)
    return bilateral_normal_filter(
        fitted,
        band_region,
        sigma_s=config.bilateral_sigma_s,
        iters=config.bilateral_iters,
    )


# ----------------------------------------------------------------------
# extrusion

VIEW_FRAMES = {
    # right (u axis), up, toward viewer
    "front": ((1, 0, 0), (0, 1, 0), (0, 0, 1)),
    "back": ((-1, 0, 0), (0, 1, 0), (0, 0, -1)),
    "right": ((0, 0, -1), (0, 1, 0), (1, 0, 0)),
    "left": ((0, 0, 1), (0, 1, 0), (-1, 0, 0)),
    "top": ((1, 0, 0), (0, 0, -1), (0, 1, 0)),
    "bottom": ((1, 0, 0), (0, 0, 1), (0, -1, 0)),
}


def extrude(
    mesh: TriMesh,
    region_stroke: Stroke,
    profile: np.ndarray,
    view: str = "front",
    snap_tol: float | None = None,
    config: EngineConfig = DEFAULT_CONFIG,
) -> TriMesh:
    """Displace the patch enclosed by a closed on-surface stroke along its
    mean normal so the patch silhouette follows a drawn profile.

    ``profile`` is (k, 2) in view coordinates: first column the parameter
    along the view's horizontal axis, second the height above the base.
    Per-vertex height is the profile height at the vertex's projected
    parameter, blended to zero across the two rings nearest the region
    boundary. The patch is subdivided first when its mean edge length
    exceeds the profile's horizontal extent / 16. A zero-height profile is
    the identity (input returned unchanged); profiles must start and end
    at (near) zero height.
    """
    if view not in VIEW_FRAMES:
        raise ValueError(f"unknown view {view!r}; options {sorted(VIEW_FRAMES)}")
    profile = np.atleast_2d(np.asarray(profile, dtype=np.float64))
    if profile.shape[0] < 2 or profile.shape[1] != 2:
        raise ValueError("profile must be (k >= 2, 2)")
    hmax = float(np.abs(profile[:, 1]).max())
    if hmax == 0.0:
        return mesh
    if abs(profile[0, 1]) > 0.05 * hmax or abs(profile[-1, 1]) > 0.05 * hmax:
        raise MeshError("profile must rise from the region boundary (end heights ~0)")
    if snap_tol is None:
        snap_tol = config.snap_tol_factor * mesh.bbox_diagonal
    gap = float(np.linalg.norm(region_stroke.points[0] - region_stroke.points[-1]))
    if gap > snap_tol:
        raise MeshError(
            f"region stroke is not closed (endpoint gap {gap:.4g} > {snap_tol:.4g})"
        )
    loop_ids = snap_stroke_to_vertices(mesh, region_stroke, snap_tol)
    loop = _connect_loop(mesh, loop_ids)
    members = _enclosed_vertices(mesh, loop)
    region = VertexRegion.from_members(mesh, members)

    u_lo, u_hi = profile[:, 0].min(), profile[:, 0].max()
    profile_len = float(u_hi - u_lo)
    if profile_len <= 0:
        raise MeshError("profile has zero horizontal extent")
    in_face = np.array(
        [all(int(v) in region.members for v in f) for f in mesh.faces], dtype=bool
    )
    if in_face.any():
        fe = mesh.faces[in_face]
        ee = np.unique(
            np.sort(
                np.concatenate([fe[:, [0, 1]], fe[:, [1, 2]], fe[:, [2, 0]]]), axis=1
            ),
            axis=0,
        )
        mean_edge = float(
            np.linalg.norm(mesh.positions[ee[:, 0]] - mesh.positions[ee[:, 1]], axis=1).mean()
        )
        if mean_edge > profile_len / 16.0:
            mesh, region = midpoint_subdivide(mesh, region)

    ridx = np.array(sorted(region.members), dtype=np.int64)
    normals = vertex_normals(mesh)
    n_mean = normals[ridx].mean(axis=0)
    n_norm = np.linalg.norm(n_mean)
    if n_norm < 1e-12:
        raise MeshError("region has no coherent normal direction")
    n_mean /= n_norm

    right = np.asarray(VIEW_FRAMES[view][0], dtype=np.float64)
    u = mesh.positions[ridx] @ right
    lo, hi = float(u.min()), float(u.max())
    span = hi - lo if hi > lo else 1.0
    u_param = u_lo + (u - lo) / span * profile_len
    order = np.argsort(profile[:, 0], kind="stable")
    heights = np.interp(u_param, profile[order, 0], profile[order, 1])

    rings = graph_distances(mesh, region.boundary_ring, max_dist=3)[ridx]
    blend = np.minimum(rings, 2) / 2.0
    out = mesh.positions.copy()
    out[ridx] += (heights * blend)[:, None] * n_mean
    return mesh.with_positions(out)


def _connect_loop(mesh: TriMesh, loop_ids: np.ndarray) -> list[int]:
    """Close the snapped stroke into a vertex loop by joining consecutive
    snapped vertices with graph shortest paths."""
    loop: list[int] = []
    ids = list(int(v) for v in loop_ids)
    if ids[0] != ids[-1]:
        ids.append(ids[0])
    for a, b in zip(ids[:-1], ids[1:]):
        loop.extend(_shortest_path(mesh, a, b)[:-1])
    return loop


def _shortest_path(mesh: TriMesh, a: int, b: int) -> list[int]:
    if a == b:
        return [a, b]
    prev = {a: a}
    frontier = [a]
    while frontier and b not in prev:
        nxt = []
        for v in frontier:
            for u in mesh.neighbors(v):
                u = int(u)
                if u not in prev:
                    prev[u] = v
                    nxt.append(u)
        frontier = nxt
    if b not in prev:
        raise MeshError(f"no path between vertices {a} and {b}")
    path = [b]
    while path[-1] != a:
        path.append(prev[path[-1]])
    return path[::-1]


def _enclosed_vertices(mesh: TriMesh, loop: list[int]) -> set[int]:
    """Vertices enclosed by the loop: the connected component of the
    loop-complement with the smaller total vertex area, plus the loop."""
    from .mesh import vertex_areas

    loop_set = set(loop)
    unvisited = set(range(mesh.n_vertices)) - loop_set
    areas = vertex_areas(mesh)
    components: list[set[int]] = []
    while unvisited:
        seed = min(unvisited)
        comp = {seed}
        frontier = [seed]
        unvisited.discard(seed)
        while frontier:
            nxt = []
            for v in frontier:
                for u in mesh.neighbors(v):
                    u = int(u)
                    if u in unvisited:
                        unvisited.discard(u)
                        comp.add(u)
                        nxt.append(u)
            frontier = nxt
        components.append(comp)
    if not components:
        return loop_set
    if len(components) == 1:
        return components[0] | loop_set
    smallest = min(components, key=lambda c: areas[sorted(c)].sum())
    return smallest | loop_set
