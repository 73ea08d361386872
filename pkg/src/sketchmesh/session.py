"""Stateful editing session: command log, undo, two-stage workflow, replay.

Every edit is a tagged command with a strictly increasing sequence number;
applying one invokes exactly one engine operation and pushes a full mesh
snapshot (meshes stay small at interactive scale). Sessions are
geometry-authoritative: screen-space strokes from a client are unprojected
onto the surface here, and the engine-level 3-D command is what gets
logged, so a log replays deterministically with no client in the loop.

Silhouette input is normalized to unit bounding-box diagonal before
inflation; all downstream defaults (projection step 0.1, snap tolerances)
assume that model scale.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import deform as deform_mod
from . import fields as fields_mod
from . import refine as refine_mod
from . import silhouette as silhouette_mod
from .config import DEFAULT_CONFIG, EngineConfig
from .mesh import MeshError, TriMesh, VertexRegion
from .stroke import Stroke

logger = logging.getLogger(__name__)

LOG_FORMAT = "sketchmesh-session"
LOG_VERSION = 1

COMMAND_TAGS = (
    "draw_silhouette",
    "extrude",
    "add_curve",
    "deform_handle",
    "carve",
    "set_field",
    "smooth",
    "set_symmetry",
    "enter_stage",
    "undo",
    "clear",
)


class SessionError(Exception):
    """Command rejected; carries a code and the offending sequence number."""

    def __init__(self, code: str, message: str, seq: int | None = None):
        self.code = code
        self.seq = seq
        super().__init__(message)

    @property
    def message(self) -> str:
        return str(self)


@dataclass(frozen=True)
class Command:
    """Tagged command with a monotone sequence number."""

    seq: int
    tag: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.tag not in COMMAND_TAGS:
            raise ValueError(f"unknown command tag {self.tag!r}")

    def to_json(self) -> str:
        return json.dumps(
            {"seq": self.seq, "cmd": self.tag, "params": self.params},
            sort_keys=True,
        )

    @staticmethod
    def from_json(line: str) -> "Command":
        obj = json.loads(line)
        return Command(seq=int(obj["seq"]), tag=obj["cmd"], params=obj.get("params", {}))


@dataclass(frozen=True)
class MeshDelta:
    """Incremental mesh change: updated/new vertex rows, removed previous
    face rows (by index), appended face rows, and the new vertex count.
    Applying it to the previous snapshot reproduces the new mesh bitwise."""

    n_vertices: int
    vertices: tuple          # ((idx, x, y, z), ...)
    faces_removed: tuple     # indices into the previous face array
    faces_added: tuple       # ((a, b, c), ...)

    def is_empty(self) -> bool:
        return not self.vertices and not self.faces_removed and not self.faces_added

    def to_wire(self) -> dict:
        return {
            "n_vertices": self.n_vertices,
            "vertices": [list(v) for v in self.vertices],
            "faces_removed": list(self.faces_removed),
            "faces_added": [list(f) for f in self.faces_added],
        }


def compute_delta(prev: TriMesh | None, new: TriMesh | None) -> MeshDelta:
    if new is None:
        nf = prev.n_faces if prev is not None else 0
        return MeshDelta(0, (), tuple(range(nf)), ())
    if prev is None:
        verts = tuple(
            (i, float(p[0]), float(p[1]), float(p[2]))
            for i, p in enumerate(new.positions)
        )
        return MeshDelta(
            new.n_vertices, verts, (), tuple(map(tuple, new.faces.tolist()))
        )
    common = min(prev.n_vertices, new.n_vertices)
    changed = np.nonzero(
        np.any(prev.positions[:common] != new.positions[:common], axis=1)
    )[0]
    entries = [
        (int(i), float(new.positions[i, 0]), float(new.positions[i, 1]), float(new.positions[i, 2]))
        for i in changed
    ]
    for i in range(common, new.n_vertices):
        p = new.positions[i]
        entries.append((i, float(p[0]), float(p[1]), float(p[2])))
    # longest common face prefix; everything after it is removed + re-added
    fp, fn = prev.faces, new.faces
    k = min(len(fp), len(fn))
    if k:
        neq = np.any(fp[:k] != fn[:k], axis=1)
        first = int(np.argmax(neq)) if neq.any() else k
    else:
        first = 0
    removed = tuple(range(first, len(fp)))
    added = tuple(map(tuple, fn[first:].tolist()))
    return MeshDelta(new.n_vertices, tuple(entries), removed, added)


def apply_delta(prev: TriMesh | None, delta: MeshDelta) -> TriMesh | None:
    if delta.n_vertices == 0:
        return None
    if prev is None:
        positions = np.zeros((delta.n_vertices, 3))
        faces = np.array(delta.faces_added, dtype=np.int32).reshape(-1, 3)
    else:
        positions = np.zeros((delta.n_vertices, 3))
        common = min(prev.n_vertices, delta.n_vertices)
        positions[:common] = prev.positions[:common]
        keep = np.setdiff1d(np.arange(prev.n_faces), np.array(delta.faces_removed, dtype=np.int64))
        kept = prev.faces[keep]
        added = np.array(delta.faces_added, dtype=np.int32).reshape(-1, 3)
        faces = np.vstack([kept, added]) if len(added) or len(kept) else kept
    for i, x, y, z in delta.vertices:
        positions[i] = (x, y, z)
    return TriMesh(positions, faces)


# ----------------------------------------------------------------------
# screen-stroke unprojection


def ray_mesh_hits(mesh: TriMesh, origins: np.ndarray, direction: np.ndarray) -> np.ndarray:
    """First-hit points of parallel rays against the mesh (NaN on miss)."""
    d = np.asarray(direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    v0 = mesh.positions[mesh.faces[:, 0]]
    e1 = mesh.positions[mesh.faces[:, 1]] - v0
    e2 = mesh.positions[mesh.faces[:, 2]] - v0
    pvec = np.cross(d, e2)
    det = np.einsum("ij,ij->i", e1, pvec)
    ok = np.abs(det) > 1e-14
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    out = np.full((len(origins), 3), np.nan)
    for i, o in enumerate(np.atleast_2d(origins)):
        tvec = o - v0
        u = np.einsum("ij,ij->i", tvec, pvec) * inv
        qvec = np.cross(tvec, e1)
        v = np.einsum("ij,j->i", qvec, d) * inv
        t = np.einsum("ij,ij->i", e2, qvec) * inv
        hit = ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > 1e-12)
        if hit.any():
            out[i] = o + t[hit].min() * d
    return out


def unproject_stroke(mesh: TriMesh, screen_stroke: dict) -> np.ndarray:
    """Map a client's orthographic screen stroke onto the surface.

    ``screen_stroke``: {"points": [[sx, sy], ...] in [-1, 1] NDC,
    "origin", "right", "up", "forward": world camera frame,
    "half_width", "half_height": world extents of the view}.
    """
    pts = np.asarray(screen_stroke["points"], dtype=np.float64)
    origin = np.asarray(screen_stroke["origin"], dtype=np.float64)
    right = np.asarray(screen_stroke["right"], dtype=np.float64)
    up = np.asarray(screen_stroke["up"], dtype=np.float64)
    forward = np.asarray(screen_stroke["forward"], dtype=np.float64)
    hw = float(screen_stroke["half_width"])
    hh = float(screen_stroke["half_height"])
    origins = origin + pts[:, :1] * hw * right + pts[:, 1:2] * hh * up
    hits = ray_mesh_hits(mesh, origins, forward)
    missed = np.isnan(hits[:, 0])
    if missed.all():
        raise MeshError("stroke does not touch the surface")
    return hits[~missed]


# ----------------------------------------------------------------------
# the session


@dataclass
class ApplyResult:
    delta: MeshDelta
    info: dict


class Session:
    """Single-writer editing session over immutable mesh snapshots."""

    def __init__(self, config: EngineConfig = DEFAULT_CONFIG):
        self.config = config
        self._reset()
        self.log: list[Command] = []
        self.last_seq = 0

    def _reset(self):
        self.stage = 1
        self.mesh_stack: list[TriMesh | None] = [None]
        self.detail_strokes: list[Stroke] = []
        self.handles: dict[int, dict] = {}
        self._next_handle = 1
        self.field = None
        self.field_spec = None
        self.symmetry = False

    @property
    def mesh(self) -> TriMesh | None:
        return self.mesh_stack[-1]

    def next_seq(self) -> int:
        return self.last_seq + 1

    def make(self, tag: str, **params) -> Command:
        return Command(seq=self.next_seq(), tag=tag, params=params)

    def apply(self, cmd: Command) -> ApplyResult:
        if cmd.seq <= self.last_seq:
            raise SessionError(
                "bad_seq",
                f"sequence {cmd.seq} not after {self.last_seq}",
                cmd.seq,
            )
        before = self.mesh
        try:
            info = self._dispatch(cmd)
        except SessionError:
            raise
        except (MeshError, ValueError) as exc:
            raise SessionError("engine", f"{cmd.tag}: {exc}", cmd.seq) from exc
        self.last_seq = cmd.seq
        self.log.append(cmd)
        return ApplyResult(delta=compute_delta(before, self.mesh), info=info)

    # -- dispatch ------------------------------------------------------

    def _dispatch(self, cmd: Command) -> dict:
        handler = getattr(self, f"_cmd_{cmd.tag}")
        return handler(cmd) or {}

    def _require_mesh(self, cmd: Command) -> TriMesh:
        if self.mesh is None:
            raise SessionError("no_mesh", f"{cmd.tag} needs a mesh", cmd.seq)
        return self.mesh

    def _require_stage(self, cmd: Command, stage: int):
        if self.stage != stage:
            raise SessionError(
                "stage",
                f"{cmd.tag} requires stage {stage} (current {self.stage})",
                cmd.seq,
            )

    def _push(self, mesh: TriMesh):
        self.mesh_stack.append(mesh)
        if len(self.mesh_stack) > self.config.undo_depth + 1:
            del self.mesh_stack[0]

    def _cmd_draw_silhouette(self, cmd: Command):
        self._require_stage(cmd, 1)
        if self.mesh is not None:
            raise SessionError(
                "stage", "draw_silhouette needs an empty canvas (Clear first)", cmd.seq
            )
        pts = np.asarray(cmd.params["points2d"], dtype=np.float64)
        pts = _normalize_curve(pts)  # unit bbox diagonal after this
        curve = silhouette_mod.SilhouetteCurve(
            pts, resample_len=self.config.resample_factor
        )
        mesh = silhouette_mod.generate_initial(curve, config=self.config)
        self._push(mesh)

    def _cmd_set_field(self, cmd: Command):
        ref = cmd.params["field_ref"]
        fld = self._resolve_field(ref, cmd)
        self.field = fld
        self.field_spec = ref
        if self.stage == 1 and self.mesh is not None:
            refined = refine_mod.refine_coarse(self.mesh, fld, config=self.config)
            self._push(refined)

    def _cmd_add_curve(self, cmd: Command):
        mesh = self._require_mesh(cmd)
        pts = self._stroke_points(cmd, mesh)
        handle = deform_mod.bind_handle(mesh, Stroke(pts), config=self.config)
        hid = self._next_handle
        self._next_handle += 1
        future = deform_mod.prefactorize_async(mesh, handle, self.config)
        self.handles[hid] = {
            "handle": handle,
            "future": future,
            "n_vertices": mesh.n_vertices,
        }
        return {"handle_id": hid, "vertex_ids": list(handle.vertex_ids)}

    def _cmd_deform_handle(self, cmd: Command):
        mesh = self._require_mesh(cmd)
        hid = int(cmd.params["handle_id"])
        entry = self.handles.get(hid)
        if entry is None:
            raise SessionError("bad_handle", f"no handle {hid}", cmd.seq)
        handle = entry["handle"].with_targets(
            np.asarray(cmd.params["targets"], dtype=np.float64)
        )
        system = None
        future = entry.get("future")
        if future is not None and future.done():
            system = future.result()
        out = deform_mod.deform(mesh, handle, system, self.config)
        self._push(out)

    def _cmd_carve(self, cmd: Command):
        mesh = self._require_mesh(cmd)
        self._require_stage(cmd, 2)
        ref = cmd.params.get("field_ref")
        fld = self._resolve_field(ref, cmd) if ref is not None else self.field
        if fld is None:
            raise SessionError("no_field", "carve needs a bound occupancy field", cmd.seq)
        pts = self._stroke_points(cmd, mesh)
        stroke = Stroke(pts, kind="on_surface")
        self.detail_strokes.append(stroke)
        out = refine_mod.carve_details(mesh, [stroke], fld, config=self.config)
        self._push(out)

    def _cmd_extrude(self, cmd: Command):
        mesh = self._require_mesh(cmd)
        self._require_stage(cmd, 1)
        pts = self._stroke_points(cmd, mesh, key="region")
        profile = np.asarray(cmd.params["profile"], dtype=np.float64)
        out = refine_mod.extrude(
            mesh, Stroke(pts), profile, view=cmd.params.get("view", "front"),
            config=self.config,
        )
        self._push(out)

    def _cmd_smooth(self, cmd: Command):
        mesh = self._require_mesh(cmd)
        ids = cmd.params.get("region")
        region = VertexRegion.from_members(mesh, ids) if ids else None
        out = refine_mod.fit_with_smoothness(
            mesh,
            mesh.positions,
            refine_mod.FitParams(lam=self.config.smooth_lambda, region=region),
            self.config,
        )
        self._push(out)

    def _cmd_set_symmetry(self, cmd: Command):
        on = bool(cmd.params.get("on", True))
        self.symmetry = on
        if on and self.mesh is not None:
            sym = _symmetrize(self.mesh)
            if sym is not None:
                self._push(sym)
            else:
                logger.warning("symmetry pairing failed; flag set without remeshing")

    def _cmd_enter_stage(self, cmd: Command):
        stage = int(cmd.params["stage"])
        if stage not in (1, 2):
            raise SessionError("stage", f"no stage {stage}", cmd.seq)
        if stage == 2:
            self._require_mesh(cmd)
        keep = bool(cmd.params.get("keep_detail_curves", False))
        if stage == 1 and self.stage == 2 and not keep:
            self.detail_strokes.clear()
        self.stage = stage

    def _cmd_undo(self, cmd: Command):
        if len(self.mesh_stack) > 1:
            self.mesh_stack.pop()

    def _cmd_clear(self, cmd: Command):
        self._reset()

    # -- helpers -------------------------------------------------------

    def _stroke_points(self, cmd: Command, mesh: TriMesh, key: str = "points") -> np.ndarray:
        if key in cmd.params:
            return np.asarray(cmd.params[key], dtype=np.float64)
        screen = cmd.params.get("screen_stroke")
        if screen is None:
            raise SessionError("bad_params", f"{cmd.tag} needs {key} or screen_stroke", cmd.seq)
        return unproject_stroke(mesh, screen)

    def _resolve_field(self, ref: dict, cmd: Command):
        kind = ref.get("kind")
        if kind == "analytic":
            return fields_mod.AnalyticField.from_spec(ref)
        if kind == "grid":
            return fields_mod.load_grid(ref["path"])
        if kind == "self":
            mesh = self._require_mesh(cmd)
            return fields_mod.mesh_to_field(mesh, falloff=ref.get("falloff"))
        raise SessionError("bad_field", f"unknown field kind {kind!r}", cmd.seq)


def _normalize_curve(pts: np.ndarray) -> np.ndarray:
    """Center the sketch and scale it to unit bounding-box diagonal (model
    units downstream assume this normalization)."""
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    diag = float(np.linalg.norm(hi - lo))
    if diag <= 0:
        raise MeshError("degenerate silhouette (zero extent)")
    center = (lo + hi) / 2.0
    return (pts - center) / diag


def _symmetrize(mesh: TriMesh) -> TriMesh | None:
    """Average each vertex with its reflected partner across z = 0; None if
    the vertex set is not closed under reflection."""
    from scipy.spatial import cKDTree

    pos = mesh.positions
    refl = pos.copy()
    refl[:, 2] = -refl[:, 2]
    dist, idx = cKDTree(pos).query(refl)
    if dist.max() > 1e-6 * max(mesh.bbox_diagonal, 1e-30):
        return None
    twin = pos[idx].copy()
    twin[:, 2] = -twin[:, 2]
    return mesh.with_positions((pos + twin) / 2.0)


# ----------------------------------------------------------------------
# log files and replay


def save_log(path, commands, config: EngineConfig = DEFAULT_CONFIG) -> None:
    """JSON-lines: a header with the engine config hash, then one command
    per line."""
    with open(path, "w", newline="\n") as fh:
        header = {
            "format": LOG_FORMAT,
            "version": LOG_VERSION,
            "config_hash": config.config_hash(),
        }
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for cmd in commands:
            fh.write(cmd.to_json() + "\n")


def load_log(path, config: EngineConfig = DEFAULT_CONFIG) -> list[Command]:
    """Parse a session log; refuses a mismatched engine config hash."""
    with open(path) as fh:
        lines = [line for line in fh.read().splitlines() if line.strip()]
    if not lines:
        raise SessionError("bad_log", "empty log file")
    header = json.loads(lines[0])
    if header.get("format") != LOG_FORMAT:
        raise SessionError("bad_log", f"not a session log: {header}")
    if header.get("config_hash") != config.config_hash():
        raise SessionError(
            "config_mismatch",
            f"log recorded under config {header.get('config_hash')}, "
            f"current is {config.config_hash()}",
        )
    return [Command.from_json(line) for line in lines[1:]]


def replay(commands, config: EngineConfig = DEFAULT_CONFIG) -> Session:
    """Fold ``apply`` over a command list from the empty state."""
    session = Session(config)
    for cmd in commands:
        session.apply(cmd)
    return session


def replay_log_file(path, config: EngineConfig = DEFAULT_CONFIG) -> TriMesh | None:
    return replay(load_log(path, config), config).mesh
