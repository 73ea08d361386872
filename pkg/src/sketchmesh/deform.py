"""Handle-based Laplacian mesh deformation.

An on-surface stroke binds to a curve of mesh vertices; the system
min ||L(v) - L(v0)||^2 + w_h * sum ||v_h - target_h||^2 (anchors fixed)
preserves the surface's differential coordinates while the handle tracks
its targets. The sparse system depends only on mesh + handle structure,
so it is factorized once (optionally on a background worker) and re-solved
per target update.
"""

from __future__ import annotations

from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy import sparse

from . import linsolve
from .config import DEFAULT_CONFIG, EngineConfig
from .mesh import MeshError, TriMesh, graph_distances, laplacian
from .refine import snap_stroke_to_vertices
from .stroke import Stroke

_executor: ThreadPoolExecutor | None = None


def _background() -> ThreadPoolExecutor:
    global _executor
    if _executor is None:
        _executor = ThreadPoolExecutor(max_workers=1, thread_name_prefix="prefactor")
    return _executor


@dataclass(frozen=True)
class HandleCurve:
    """Ordered handle vertices, optional per-vertex targets, and the
    far-field vertices held fixed."""

    vertex_ids: tuple
    anchor_ids: tuple
    targets: np.ndarray | None = None

    def __post_init__(self):
        ids = tuple(int(v) for v in self.vertex_ids)
        if len(set(ids)) != len(ids):
            raise ValueError("handle vertices must be distinct")
        anchors = tuple(int(v) for v in self.anchor_ids)
        if set(anchors) & set(ids):
            raise ValueError("anchors and handle vertices must not overlap")
        object.__setattr__(self, "vertex_ids", ids)
        object.__setattr__(self, "anchor_ids", anchors)
        if self.targets is not None:
            t = np.asarray(self.targets, dtype=np.float64)
            if t.shape != (len(ids), 3):
                raise ValueError(
                    f"targets must be ({len(ids)}, 3), got {t.shape}"
                )
            t.setflags(write=False)
            object.__setattr__(self, "targets", t)

    def with_targets(self, targets) -> "HandleCurve":
        return replace(self, targets=np.asarray(targets, dtype=np.float64))


def bind_handle(
    mesh: TriMesh,
    stroke: Stroke,
    snap_tol: float | None = None,
    anchor_rings: int | None = None,
    config: EngineConfig = DEFAULT_CONFIG,
) -> HandleCurve:
    """Snap a stroke to mesh vertices and pick the fixed far field.

    Each stroke point maps to its nearest vertex (lowest index on ties,
    error beyond ``snap_tol``); consecutive duplicates collapse, and a
    non-consecutive revisit is an error. Anchors default to every vertex
    more than ``anchor_rings`` rings from the handle.
    """
    if snap_tol is None:
        snap_tol = config.snap_tol_factor * mesh.bbox_diagonal
    if anchor_rings is None:
        anchor_rings = config.anchor_rings
    ids = snap_stroke_to_vertices(mesh, stroke, snap_tol)
    seen = set()
    for v in ids:
        if int(v) in seen:
            raise MeshError(f"stroke revisits vertex {int(v)} non-consecutively")
        seen.add(int(v))
    dist = graph_distances(mesh, ids, max_dist=anchor_rings + 1)
    anchors = tuple(int(v) for v in np.where(dist > anchor_rings)[0])
    return HandleCurve(vertex_ids=tuple(int(v) for v in ids), anchor_ids=anchors)


class DeformSystem:
    """Prefactorized Laplacian-editing system for one (mesh, handle) pair.

    Holds the reusable normal-equation factorization plus the index
    bookkeeping to rebuild the right-hand side for any handle targets.
    """

    def __init__(self, mesh: TriMesh, handle: HandleCurve, config: EngineConfig):
        self.n_vertices = mesh.n_vertices
        self.handle_weight = config.handle_weight
        anchors = np.array(handle.anchor_ids, dtype=np.int64)
        self.free = np.setdiff1d(np.arange(mesh.n_vertices), anchors)
        pos_in_free = np.full(mesh.n_vertices, -1, dtype=np.int64)
        pos_in_free[self.free] = np.arange(len(self.free))
        self.handle_rows = pos_in_free[np.array(handle.vertex_ids, dtype=np.int64)]
        lap = laplacian(mesh, config.laplacian_weighting)
        lap_free_rows = lap[self.free]
        self.l_ff = lap_free_rows[:, self.free].tocsr()
        nh = len(handle.vertex_ids)
        sel = sparse.csr_matrix(
            (
                np.full(nh, self.handle_weight),
                (np.arange(nh), self.handle_rows),
            ),
            shape=(nh, len(self.free)),
        )
        a = sparse.vstack([self.l_ff, sel], format="csr")
        self.factorization = linsolve.factorize(a)
        self._n_l_rows = self.l_ff.shape[0]

    def solve(self, mesh: TriMesh, handle: HandleCurve) -> TriMesh:
        if mesh.n_vertices != self.n_vertices:
            raise MeshError(
                f"factorization built for {self.n_vertices} vertices, "
                f"mesh has {mesh.n_vertices}"
            )
        if handle.targets is None:
            raise ValueError("handle has no targets")
        rest = mesh.positions
        b = np.zeros((self._n_l_rows + len(handle.vertex_ids), 3))
        hd = handle.targets - rest[np.array(handle.vertex_ids, dtype=np.int64)]
        b[self._n_l_rows :] = self.handle_weight * hd
        u = self.factorization.solve(b)
        out = rest.copy()
        out[self.free] = rest[self.free] + u
        return mesh.with_positions(out)


def prefactorize(
    mesh: TriMesh, handle: HandleCurve, config: EngineConfig = DEFAULT_CONFIG
) -> DeformSystem:
    """Build and decompose the editing system (reusable for any targets)."""
    return DeformSystem(mesh, handle, config)


def prefactorize_async(
    mesh: TriMesh, handle: HandleCurve, config: EngineConfig = DEFAULT_CONFIG
) -> Future:
    """Background prefactorization; block on the returned future when the
    factorization is needed."""
    return _background().submit(DeformSystem, mesh, handle, config)


def deform(
    mesh: TriMesh,
    handle: HandleCurve,
    system: DeformSystem | None = None,
    config: EngineConfig = DEFAULT_CONFIG,
) -> TriMesh:
    """Solve the handle-deformation system; falls back to a fresh
    factorization when none is supplied (e.g. background work not done).

    Anchor vertices are bitwise unchanged (they are eliminated, not
    penalized); the solve is linear in the targets.
    """
    if system is None:
        system = DeformSystem(mesh, handle, config)
    return system.solve(mesh, handle)
