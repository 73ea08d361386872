"""WebSocket service exposing sessions over the wire protocol.

One connection = one session, commands processed strictly in arrival
order. Requests are JSON ``{"id", "cmd", "params"}``; command tags map
1:1 onto session commands (the server assigns sequence numbers), plus a
few read-only service verbs (``get_mesh``, ``export_obj``, ``export_log``,
``get_state``). Responses carry either the mesh delta or a structured
error. Static assets (the browser client) are served from the directory
passed to ``build_app``.
"""

from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from .config import DEFAULT_CONFIG, EngineConfig
from .objio import format_obj
from .session import COMMAND_TAGS, LOG_FORMAT, LOG_VERSION, Session, SessionError


def encode_mesh(mesh) -> dict:
    if mesh is None:
        return {"positions": "", "faces": ""}
    return {
        "positions": base64.b64encode(
            np.ascontiguousarray(mesh.positions, dtype="<f4").tobytes()
        ).decode(),
        "faces": base64.b64encode(
            np.ascontiguousarray(mesh.faces, dtype="<u4").tobytes()
        ).decode(),
    }


def log_text(session: Session) -> str:
    header = {
        "format": LOG_FORMAT,
        "version": LOG_VERSION,
        "config_hash": session.config.config_hash(),
    }
    lines = [json.dumps(header, sort_keys=True)]
    lines += [cmd.to_json() for cmd in session.log]
    return "\n".join(lines) + "\n"


def handle_message(session: Session, msg: dict) -> dict:
    """Synchronous dispatch of one wire request against a session."""
    req_id = msg.get("id")
    cmd = msg.get("cmd")
    params = msg.get("params") or {}
    try:
        if cmd in COMMAND_TAGS:
            result = session.apply(session.make(cmd, **params))
            return {
                "id": req_id,
                "ok": True,
                "seq": session.last_seq,
                "delta": result.delta.to_wire(),
                "info": result.info,
            }
        if cmd == "get_mesh":
            return {"id": req_id, "ok": True, "mesh": encode_mesh(session.mesh)}
        if cmd == "export_obj":
            if session.mesh is None:
                return _error(req_id, "no_mesh", "nothing to export", None)
            return {"id": req_id, "ok": True, "obj": format_obj(session.mesh)}
        if cmd == "export_log":
            return {"id": req_id, "ok": True, "log": log_text(session)}
        if cmd == "get_state":
            return {
                "id": req_id,
                "ok": True,
                "state": {
                    "stage": session.stage,
                    "symmetry": session.symmetry,
                    "n_vertices": 0 if session.mesh is None else session.mesh.n_vertices,
                    "n_faces": 0 if session.mesh is None else session.mesh.n_faces,
                    "handles": sorted(session.handles),
                    "seq": session.last_seq,
                    "config_hash": session.config.config_hash(),
                },
            }
        return _error(req_id, "bad_cmd", f"unknown command {cmd!r}", None)
    except SessionError as exc:
        return _error(req_id, exc.code, exc.message, exc.seq)
    except Exception as exc:  # engine bug shield: report, keep session alive
        return _error(req_id, "internal", f"{type(exc).__name__}: {exc}", None)


def _error(req_id, code, message, seq) -> dict:
    return {
        "id": req_id,
        "ok": False,
        "error": {"code": code, "message": message, "seq": seq},
    }


def build_app(
    config: EngineConfig = DEFAULT_CONFIG, static_dir: str | None = None
) -> FastAPI:
    app = FastAPI(title="sketchmesh")

    @app.websocket("/ws")
    async def ws_endpoint(websocket: WebSocket):
        await websocket.accept()
        session = Session(config)
        try:
            while True:
                msg = await websocket.receive_json()
                await websocket.send_json(handle_message(session, msg))
        except WebSocketDisconnect:
            pass

    if static_dir is None:
        bundled = Path(__file__).resolve().parents[2] / "frontend" / "dist"
        if bundled.is_dir():
            static_dir = str(bundled)
    if static_dir and Path(static_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")
    return app
