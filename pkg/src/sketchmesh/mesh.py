"""Triangle-mesh core: data structure, Laplacians, subdivision, filtering, welding.

Meshes are immutable snapshots: every operation returns a new ``TriMesh``.
Positions are float64, faces int32 with consistent (counterclockwise) winding.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import sparse

ZERO_AREA_REL = 1e-12  # x bbox-diag^2; faces below this are invalid


class MeshError(ValueError):
    """Raised when mesh data violates a structural invariant."""


class TriMesh:
    """Indexed, orientable triangle mesh.

    Parameters
    ----------
    positions : array_like, shape (n, 3)
        Vertex positions in model units.
    faces : array_like, shape (m, 3)
        Vertex-index triples, counterclockwise when viewed from outside.
    validate : bool
        Check structural invariants (index bounds, orientation, edge
        manifoldness, face areas). Leave on; construction is the choke
        point that keeps every public operation's output valid.
    """

    def __init__(self, positions, faces, validate: bool = True):
        positions = np.ascontiguousarray(positions, dtype=np.float64)
        faces = np.ascontiguousarray(faces, dtype=np.int32)
        if positions.ndim != 2 or positions.shape[1] != 3:
            raise MeshError(f"positions must be (n, 3), got {positions.shape}")
        if faces.size == 0:
            faces = np.zeros((0, 3), dtype=np.int32)
        if faces.ndim != 2 or faces.shape[1] != 3:
            raise MeshError(f"faces must be (m, 3), got {faces.shape}")
        self.positions = positions
        self.faces = faces
        self.positions.setflags(write=False)
        self.faces.setflags(write=False)
        if validate:
            self._validate()

    # ------------------------------------------------------------------
    # construction helpers

    def with_positions(self, positions) -> "TriMesh":
        """Same connectivity, new positions."""
        return TriMesh(positions, self.faces)

    @property
    def n_vertices(self) -> int:
        return self.positions.shape[0]

    @property
    def n_faces(self) -> int:
        return self.faces.shape[0]

    def _validate(self):
        n = self.n_vertices
        if self.n_faces == 0:
            return
        if self.faces.min() < 0 or self.faces.max() >= n:
            raise MeshError("face index out of range")
        t = self.faces
        if np.any((t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 2] == t[:, 0])):
            bad = np.where(
                (t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 2] == t[:, 0])
            )[0]
            raise MeshError(f"faces repeat a vertex: {bad[:8].tolist()}")
        # Consistent orientation <=> no directed edge appears twice; an
        # undirected edge then bounds at most 2 faces automatically.
        he = self.halfedges
        keys = he[:, 0].astype(np.int64) * n + he[:, 1]
        uniq, counts = np.unique(keys, return_counts=True)
        if np.any(counts > 1):
            dup = uniq[counts > 1][0]
            raise MeshError(
                f"inconsistent orientation or non-manifold edge "
                f"({dup // n}, {dup % n}) bounds multiple faces with equal winding"
            )
        diag = self.bbox_diagonal
        if diag > 0:
            bad = np.where(self.face_areas <= ZERO_AREA_REL * diag * diag)[0]
        else:
            bad = np.arange(self.n_faces)
        if bad.size:
            raise MeshError(f"zero-area faces: {bad[:8].tolist()}")

    # ------------------------------------------------------------------
    # derived quantities (cached; the mesh is immutable)

    @cached_property
    def bbox(self) -> np.ndarray:
        """(2, 3) axis-aligned bounds."""
        if self.n_vertices == 0:
            return np.zeros((2, 3))
        return np.stack([self.positions.min(axis=0), self.positions.max(axis=0)])

    @cached_property
    def bbox_diagonal(self) -> float:
        b = self.bbox
        return float(np.linalg.norm(b[1] - b[0]))

    @cached_property
    def halfedges(self) -> np.ndarray:
        """(3m, 2) directed edges in face winding order."""
        t = self.faces
        return np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]], axis=0)

    @cached_property
    def edges(self) -> np.ndarray:
        """(k, 2) unique undirected edges, each row sorted."""
        he = np.sort(self.halfedges, axis=1)
        return np.unique(he, axis=0)

    @cached_property
    def edge_face_count(self) -> np.ndarray:
        """Number of incident faces per row of ``edges``."""
        he = np.sort(self.halfedges, axis=1)
        keys = he[:, 0].astype(np.int64) * self.n_vertices + he[:, 1]
        ekeys = self.edges[:, 0].astype(np.int64) * self.n_vertices + self.edges[:, 1]
        order = np.argsort(ekeys)
        counts = np.zeros(len(ekeys), dtype=np.int64)
        idx = np.searchsorted(ekeys[order], keys)
        np.add.at(counts, order[idx], 1)
        return counts

    @cached_property
    def adjacency(self) -> sparse.csr_matrix:
        """Symmetric vertex-vertex adjacency (0/1)."""
        e = self.edges
        n = self.n_vertices
        i = np.concatenate([e[:, 0], e[:, 1]])
        j = np.concatenate([e[:, 1], e[:, 0]])
        a = sparse.csr_matrix(
            (np.ones(len(i)), (i, j)), shape=(n, n), dtype=np.float64
        )
        a.data[:] = 1.0
        return a

    @cached_property
    def vertex_degrees(self) -> np.ndarray:
        return np.asarray(self.adjacency.sum(axis=1)).ravel().astype(np.int64)

    @cached_property
    def vertex_face_incidence(self) -> sparse.csr_matrix:
        """(n, m) vertex-to-face incidence."""
        m = self.n_faces
        rows = self.faces.ravel()
        cols = np.repeat(np.arange(m), 3)
        return sparse.csr_matrix(
            (np.ones(3 * m), (rows, cols)), shape=(self.n_vertices, m)
        )

    def faces_of_vertex(self, v: int) -> np.ndarray:
        inc = self.vertex_face_incidence
        return inc.indices[inc.indptr[v] : inc.indptr[v + 1]]

    def neighbors(self, v: int) -> np.ndarray:
        a = self.adjacency
        return a.indices[a.indptr[v] : a.indptr[v + 1]]

    @cached_property
    def face_normals(self) -> np.ndarray:
        v0 = self.positions[self.faces[:, 0]]
        v1 = self.positions[self.faces[:, 1]]
        v2 = self.positions[self.faces[:, 2]]
        n = np.cross(v1 - v0, v2 - v0)
        ln = np.linalg.norm(n, axis=1)
        ln[ln < 1e-300] = 1.0
        return n / ln[:, None]

    @cached_property
    def face_areas(self) -> np.ndarray:
        v0 = self.positions[self.faces[:, 0]]
        v1 = self.positions[self.faces[:, 1]]
        v2 = self.positions[self.faces[:, 2]]
        cr = np.cross(v1 - v0, v2 - v0)
        return 0.5 * np.linalg.norm(cr, axis=1)

    @cached_property
    def face_centroids(self) -> np.ndarray:
        return self.positions[self.faces].mean(axis=1)

    @cached_property
    def mean_edge_length(self) -> float:
        e = self.edges
        if len(e) == 0:
            return 0.0
        return float(
            np.linalg.norm(self.positions[e[:, 0]] - self.positions[e[:, 1]], axis=1).mean()
        )

    @cached_property
    def boundary_loops(self) -> list[np.ndarray]:
        """Closed vertex loops of boundary edges (edges with one face)."""
        bnd = self.edges[self.edge_face_count == 1]
        if len(bnd) == 0:
            return []
        succ: dict[int, list[int]] = {}
        for u, v in bnd:
            succ.setdefault(int(u), []).append(int(v))
            succ.setdefault(int(v), []).append(int(u))
        visited = set()
        loops = []
        for start in sorted(succ):
            if start in visited:
                continue
            loop = [start]
            visited.add(start)
            prev, cur = None, start
            while True:
                nxts = [w for w in succ[cur] if w != prev and w not in visited]
                if not nxts:
                    break
                prev, cur = cur, min(nxts)
                loop.append(cur)
                visited.add(cur)
            loops.append(np.array(loop, dtype=np.int64))
        return loops

    def is_closed(self) -> bool:
        return bool(np.all(self.edge_face_count == 2))

    def enclosed_volume(self) -> float:
        """Signed volume (positive for outward-oriented closed meshes)."""
        v0 = self.positions[self.faces[:, 0]]
        v1 = self.positions[self.faces[:, 1]]
        v2 = self.positions[self.faces[:, 2]]
        return float(np.einsum("ij,ij->", v0, np.cross(v1, v2)) / 6.0)


# ----------------------------------------------------------------------
# per-vertex quantities


def vertex_normals(mesh: TriMesh) -> np.ndarray:
    """Unit vertex normals (area-weighted average of incident face normals).

    Vertices without any incident face get the fixed fallback (0, 0, 1)
    and trigger a warning.

    Returns
    -------
    normals : ndarray, shape (n, 3)
    """
    acc = np.zeros((mesh.n_vertices, 3))
    weighted = mesh.face_normals * mesh.face_areas[:, None]
    for k in range(3):
        np.add.at(acc, mesh.faces[:, k], weighted)
    ln = np.linalg.norm(acc, axis=1)
    degenerate = ln < 1e-300
    if np.any(degenerate):
        face_degree = np.asarray(mesh.vertex_face_incidence.sum(axis=1)).ravel()
        isolated = np.where(face_degree == 0)[0]
        if isolated.size:
            warnings.warn(
                f"{isolated.size} vertices have no incident face; "
                "normals set to (0, 0, 1)",
                stacklevel=2,
            )
        acc[degenerate] = (0.0, 0.0, 1.0)
        ln[degenerate] = 1.0
    return acc / ln[:, None]


def vertex_areas(mesh: TriMesh) -> np.ndarray:
    """Barycentric vertex areas: one third of each incident face area.

    Sums exactly to the total surface area.
    """
    a3 = np.repeat(mesh.face_areas[:, None] / 3.0, 3, axis=1)
    return np.bincount(mesh.faces.ravel(), a3.ravel(), minlength=mesh.n_vertices)


def laplacian(mesh: TriMesh, weighting: str = "uniform") -> sparse.csr_matrix:
    """Sparse Laplacian, row i: (weighted mean of neighbors) - center.

    Constant fields map to zero; the sign convention makes L point inward on
    convex shapes. Applies component-wise to vector-valued fields.

    Parameters
    ----------
    weighting : {"uniform", "cotangent"}
        Uniform graph weights (default) or cotangent weights, both
        normalized per row so the operator stays an affine average.

    Raises
    ------
    MeshError
        If any vertex is isolated (no neighbors).
    """
    n = mesh.n_vertices
    deg = mesh.vertex_degrees
    isolated = np.where(deg == 0)[0]
    if isolated.size:
        raise MeshError(f"isolated vertices (no neighbors): {isolated[:16].tolist()}")
    if weighting == "uniform":
        w = mesh.adjacency.copy()
    elif weighting == "cotangent":
        w = _cotangent_weights(mesh)
    else:
        raise ValueError(f"unknown weighting {weighting!r}")
    rowsum = np.asarray(w.sum(axis=1)).ravel()
    inv = sparse.diags(1.0 / rowsum)
    return (inv @ w - sparse.identity(n, format="csr")).tocsr()


def _cotangent_weights(mesh: TriMesh) -> sparse.csr_matrix:
    pos = mesh.positions
    t = mesh.faces
    n = mesh.n_vertices
    rows, cols, vals = [], [], []
    for a, b, c in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
        # cotangent at corner c weights edge (a, b)
        u = pos[t[:, a]] - pos[t[:, c]]
        v = pos[t[:, b]] - pos[t[:, c]]
        cross = np.linalg.norm(np.cross(u, v), axis=1)
        cross[cross < 1e-300] = 1e-300
        cot = np.einsum("ij,ij->i", u, v) / cross
        cot = np.maximum(cot, 1e-8)  # clamp: keep the average well-posed
        rows.extend([t[:, a], t[:, b]])
        cols.extend([t[:, b], t[:, a]])
        vals.extend([cot, cot])
    w = sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    )
    return w


# ----------------------------------------------------------------------
# regions


@dataclass(frozen=True)
class VertexRegion:
    """A connected-ish set of mesh vertices with its ordered boundary ring.

    Boundary vertices are the members with at least one neighbor outside
    the region.
    """

    members: frozenset
    boundary_ring: tuple

    @staticmethod
    def from_members(mesh: TriMesh, members) -> "VertexRegion":
        members = frozenset(int(v) for v in members)
        if members and (min(members) < 0 or max(members) >= mesh.n_vertices):
            raise MeshError("region member out of range")
        boundary = set()
        for v in members:
            if any(int(u) not in members for u in mesh.neighbors(v)):
                boundary.add(v)
        ring = _order_ring(mesh, boundary)
        return VertexRegion(members=members, boundary_ring=tuple(ring))

    def is_empty(self) -> bool:
        return len(self.members) == 0


def _order_ring(mesh: TriMesh, boundary: set) -> list[int]:
    """Order boundary vertices by walking adjacency; falls back to sorted
    order for fragments that do not form a path."""
    if not boundary:
        return []
    remaining = set(boundary)
    ordered = []
    while remaining:
        cur = min(remaining)
        chain = [cur]
        remaining.discard(cur)
        while True:
            nxt = [int(u) for u in mesh.neighbors(chain[-1]) if int(u) in remaining]
            if not nxt:
                break
            chain.append(min(nxt))
            remaining.discard(chain[-1])
        ordered.extend(chain)
    return ordered


def k_ring(mesh: TriMesh, seeds, k: int) -> set:
    """Vertices within graph distance <= k of the seed set."""
    dist = graph_distances(mesh, seeds, max_dist=k)
    return set(np.where(dist <= k)[0].tolist())


def graph_distances(mesh: TriMesh, seeds, max_dist: int | None = None) -> np.ndarray:
    """Hop count from the seed set per vertex (unreached = a large sentinel)."""
    n = mesh.n_vertices
    dist = np.full(n, np.iinfo(np.int64).max // 2, dtype=np.int64)
    frontier = np.array(sorted(set(int(s) for s in seeds)), dtype=np.int64)
    dist[frontier] = 0
    d = 0
    adj = mesh.adjacency
    while len(frontier) and (max_dist is None or d < max_dist):
        d += 1
        nxt = set()
        for v in frontier:
            for u in adj.indices[adj.indptr[v] : adj.indptr[v + 1]]:
                if dist[u] > d:
                    dist[u] = d
                    nxt.add(int(u))
        frontier = np.array(sorted(nxt), dtype=np.int64)
    return dist


# ----------------------------------------------------------------------
# subdivision


def split_marked_edges(mesh: TriMesh, marked_edges) -> tuple[TriMesh, dict]:
    """Conforming split of the given undirected edges at their midpoints.

    Untouched faces keep their original rows and relative order; all
    children of split faces are appended after them (the kept-then-appended
    discipline keeps incremental mesh deltas small). Returns the new mesh
    and the midpoint map {(u, v) sorted: new vertex index}.
    """
    marked = {tuple(sorted((int(u), int(v)))) for u, v in marked_edges}
    if not marked:
        return mesh, {}
    pos = mesh.positions
    new_pts = []
    mid: dict[tuple, int] = {}
    nv = mesh.n_vertices
    for u, v in sorted(marked):
        mid[(u, v)] = nv + len(new_pts)
        new_pts.append((pos[u] + pos[v]) / 2.0)
    kept = []
    appended = []

    def midpoint(a, b):
        return mid.get((a, b) if a < b else (b, a))

    for a, b, c in mesh.faces:
        a, b, c = int(a), int(b), int(c)
        mab, mbc, mca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        k = sum(m is not None for m in (mab, mbc, mca))
        if k == 0:
            kept.append((a, b, c))
        elif k == 3:
            appended += [(a, mab, mca), (mab, b, mbc), (mca, mbc, c), (mab, mbc, mca)]
        elif k == 1:
            # rotate so the marked edge is (a, b)
            if mbc is not None:
                a, b, c, mab = b, c, a, mbc
            elif mca is not None:
                a, b, c, mab = c, a, b, mca
            appended += [(a, mab, c), (mab, b, c)]
        else:
            # rotate so the unmarked edge is (c, a)
            if mab is None:
                a, b, c, mab, mbc = b, c, a, mbc, mca
            elif mbc is None:
                a, b, c, mab, mbc = c, a, b, mca, mab
            appended += [(a, mab, mbc), (mab, b, mbc), (a, mbc, c)]
    positions = np.vstack([pos, np.array(new_pts)]) if new_pts else pos.copy()
    faces = np.array(kept + appended, dtype=np.int32)
    return TriMesh(positions, faces), mid


def midpoint_subdivide(
    mesh: TriMesh, region: VertexRegion
) -> tuple[TriMesh, VertexRegion]:
    """1-to-4 split of every face fully inside the region, with conforming
    transition splits on adjacent faces (no T-junctions).

    New midpoint vertices join the region. Original vertex positions and
    indices are unchanged; an empty region returns the input unchanged.
    """
    if region.is_empty():
        return mesh, region
    members = region.members
    inside = np.array(
        [all(int(v) in members for v in f) for f in mesh.faces], dtype=bool
    )
    if not inside.any():
        return mesh, region
    t = mesh.faces[inside]
    marked = np.sort(
        np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]], axis=0), axis=1
    )
    out, mid = split_marked_edges(mesh, map(tuple, np.unique(marked, axis=0)))
    new_members = set(members) | set(mid.values())
    return out, VertexRegion.from_members(out, new_members)


# ----------------------------------------------------------------------
# bilateral normal filtering (two-step: filter face normals, then move
# vertices to match them)


def bilateral_normal_filter(
    mesh: TriMesh,
    region: VertexRegion,
    sigma_c: float | None = None,
    sigma_s: float = 0.35,
    iters: int = 3,
    vertex_iters: int = 20,
) -> TriMesh:
    """Feature-preserving smoothing of the region's face normals followed by
    a least-squares vertex update; vertices outside the region are unchanged.

    Parameters
    ----------
    sigma_c : float, optional
        Spatial kernel width; defaults to the mean edge length inside the
        region.
    sigma_s : float
        Normal-difference kernel width. Small values preserve sharp
        creases (the kernel collapses across large normal jumps).
    iters : int
        Normal-filtering iterations.
    vertex_iters : int
        Vertex-update sweeps after filtering.
    """
    if sigma_s <= 0 or (sigma_c is not None and sigma_c <= 0):
        raise ValueError("kernel widths must be positive")
    if region.is_empty() or mesh.n_faces == 0:
        return mesh
    members = region.members
    move = np.array([v in members for v in range(mesh.n_vertices)], dtype=bool)
    in_face = np.array(
        [all(int(v) in members for v in f) for f in mesh.faces], dtype=bool
    )
    region_faces = np.where(in_face)[0]
    if len(region_faces) == 0:
        return mesh

    if sigma_c is None:
        e = mesh.edges
        both_in = move[e[:, 0]] & move[e[:, 1]]
        ee = e[both_in] if both_in.any() else e
        sigma_c = float(
            np.linalg.norm(
                mesh.positions[ee[:, 0]] - mesh.positions[ee[:, 1]], axis=1
            ).mean()
        )

    # spatial support: faces whose centroids fall inside the kernel radius
    from scipy.spatial import cKDTree

    centroids = mesh.face_centroids
    tree = cKDTree(centroids)
    nbrs = tree.query_ball_point(centroids[region_faces], 2.0 * sigma_c)
    normals = mesh.face_normals.copy()
    areas = mesh.face_areas
    for _ in range(iters):
        filtered = normals.copy()
        for f, js in zip(region_faces, nbrs):
            js = np.asarray(js, dtype=np.int64)
            d = np.linalg.norm(centroids[js] - centroids[f], axis=1)
            dn = np.linalg.norm(normals[js] - normals[f], axis=1)
            w = (
                areas[js]
                * np.exp(-0.5 * (d / sigma_c) ** 2)
                * np.exp(-0.5 * (dn / sigma_s) ** 2)
            )
            acc = (w[:, None] * normals[js]).sum(axis=0)
            ln = np.linalg.norm(acc)
            if ln > 1e-300:
                filtered[f] = acc / ln
        normals = filtered

    pos = mesh.positions.copy()
    t = mesh.faces
    face_deg = np.asarray(mesh.vertex_face_incidence.sum(axis=1)).ravel()
    face_deg[face_deg == 0] = 1
    for _ in range(vertex_iters):
        cent = pos[t].mean(axis=1)
        disp = np.zeros_like(pos)
        for k in range(3):
            vi = t[:, k]
            h = np.einsum("ij,ij->i", normals, cent - pos[vi])
            np.add.at(disp, vi, normals * h[:, None])
        step = disp / face_deg[:, None]
        pos[move] += step[move]
    return TriMesh(pos, mesh.faces)


# ----------------------------------------------------------------------
# mirror welding


@dataclass(frozen=True)
class MirrorPlane:
    """Axis-aligned mirror plane: coordinate ``axis`` equals ``position``."""

    axis: int = 2
    position: float = 0.0

    def reflect(self, points: np.ndarray) -> np.ndarray:
        out = np.array(points, dtype=np.float64, copy=True)
        out[:, self.axis] = 2.0 * self.position - out[:, self.axis]
        return out


def mirror_weld(
    half: TriMesh, plane: MirrorPlane, thickness_offset: float = 0.0
) -> TriMesh:
    """Weld ``half`` to its reflection across ``plane`` into a watertight mesh.

    The half must have a single open boundary loop lying on the plane
    (within 1e-6 x bbox diagonal); boundary vertices are welded once, all
    others are duplicated and reflected (mirrored faces get reversed
    winding). ``thickness_offset`` lifts non-boundary vertices that sit on
    the plane off it before mirroring, which is what makes welding a flat
    sheet well-posed; a flat half welded at zero offset is rejected as
    degenerate.

    Raises
    ------
    MeshError
        Boundary off the plane (reports max deviation), multiple boundary
        loops, or a degenerate (zero-thickness / self-coincident) result.
    """
    diag = half.bbox_diagonal
    tol = 1e-6 * diag
    loops = half.boundary_loops
    if len(loops) != 1:
        raise MeshError(f"expected a single boundary loop, found {len(loops)}")
    boundary = loops[0]
    dev = np.abs(half.positions[boundary, plane.axis] - plane.position)
    if dev.max() > tol:
        raise MeshError(
            f"boundary loop not on mirror plane: max deviation {dev.max():.3g} "
            f"(tolerance {tol:.3g})"
        )

    pos = half.positions.copy()
    on_plane = np.abs(pos[:, plane.axis] - plane.position) <= tol
    is_boundary = np.zeros(half.n_vertices, dtype=bool)
    is_boundary[boundary] = True
    if thickness_offset > 0.0:
        lift = on_plane & ~is_boundary
        pos[lift, plane.axis] = plane.position + thickness_offset

    weld = is_boundary
    n = half.n_vertices
    new_index = np.full(n, -1, dtype=np.int64)
    new_index[weld] = np.where(weld)[0]
    free = np.where(~weld)[0]
    new_index[free] = n + np.arange(len(free))

    mirrored = plane.reflect(pos[free])
    out_pos = np.vstack([pos, mirrored])
    mfaces = new_index[half.faces]
    mfaces = mfaces[:, ::-1]  # reversed winding keeps orientation consistent
    degenerate = np.all(np.isin(half.faces, np.where(weld)[0]), axis=1)
    if degenerate.any():
        raise MeshError(
            f"degenerate weld: {int(degenerate.sum())} faces have all corners "
            "on the mirror plane and would coincide with their reflection"
        )
    out_faces = np.vstack([half.faces, mfaces.astype(np.int32)])
    try:
        out = TriMesh(out_pos, out_faces)
    except MeshError as exc:
        raise MeshError(f"degenerate weld: {exc}") from exc
    if not out.is_closed():
        raise MeshError("weld did not close the mesh")
    if abs(out.enclosed_volume()) <= 1e-12 * diag**3:
        raise MeshError("degenerate weld: zero enclosed volume (flat input, zero offset)")
    return out
