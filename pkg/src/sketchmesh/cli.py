"""Command-line entry points: serve the interactive service, replay logs,
export detail-input stacks, bake occupancy grids."""

from __future__ import annotations

import argparse
import sys

from .config import DEFAULT_CONFIG


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="sketchmesh",
        description="sketch-to-mesh modeling engine",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_serve = sub.add_parser("serve", help="run the interactive WebSocket service")
    p_serve.add_argument("--port", type=int, default=8000)
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--static", default=None, help="directory of UI assets")

    p_replay = sub.add_parser("replay", help="replay a session log to an OBJ")
    p_replay.add_argument("log")
    p_replay.add_argument("-o", "--output", required=True)

    p_stack = sub.add_parser(
        "export-stack", help="replay a log and write the 256x256x6 detail-input stack"
    )
    p_stack.add_argument("log")
    p_stack.add_argument("-o", "--output", required=True)
    p_stack.add_argument("--size", type=int, default=DEFAULT_CONFIG.raster_size)

    p_field = sub.add_parser("field", help="occupancy-field utilities")
    field_sub = p_field.add_subparsers(dest="field_command", required=True)
    p_bake = field_sub.add_parser("bake", help="bake a mesh into a grid field file")
    p_bake.add_argument("mesh")
    p_bake.add_argument("-o", "--output", required=True)
    p_bake.add_argument("--dims", type=int, default=128)
    p_bake.add_argument("--falloff", type=float, default=None)

    args = parser.parse_args(argv)
    if args.command == "serve":
        return _serve(args)
    if args.command == "replay":
        return _replay(args)
    if args.command == "export-stack":
        return _export_stack(args)
    if args.command == "field":
        return _field_bake(args)
    return 2


def _serve(args) -> int:
    import uvicorn

    from .server import build_app

    app = build_app(DEFAULT_CONFIG, static_dir=args.static)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def _replay(args) -> int:
    from .objio import write_obj
    from .session import load_log, replay

    session = replay(load_log(args.log))
    if session.mesh is None:
        print("log replayed to an empty canvas; nothing to write", file=sys.stderr)
        return 1
    write_obj(session.mesh, args.output)
    print(f"wrote {args.output} ({session.mesh.n_vertices} vertices)")
    return 0


def _export_stack(args) -> int:
    from .raster import (
        OrthoCamera,
        compose_detail_input,
        render_contours,
        render_depth,
        render_normals,
        save_stack,
    )
    from .session import load_log, replay

    session = replay(load_log(args.log))
    if session.mesh is None:
        print("log replayed to an empty canvas; nothing to render", file=sys.stderr)
        return 1
    mesh = session.mesh
    front = OrthoCamera.fit(mesh, "front")
    back = front.flipped()
    size = args.size
    sketch = render_contours(mesh, front, session.detail_strokes, size=size)
    normals = render_normals(mesh, front, size=size)
    d_front = render_depth(mesh, front, size=size)
    d_back = render_depth(mesh, back, size=size)
    save_stack(compose_detail_input(sketch, normals, d_front, d_back), args.output)
    print(f"wrote {args.output} ({size}x{size}x6)")
    return 0


def _field_bake(args) -> int:
    from .fields import GridField, mesh_to_field, save_grid
    from .objio import read_obj

    mesh = read_obj(args.mesh)
    field = mesh_to_field(mesh, falloff=args.falloff)
    dims = (args.dims, args.dims, args.dims)
    grid = GridField.from_field(field, dims=dims)
    save_grid(grid, args.output)
    print(f"wrote {args.output} ({args.dims}^3)")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
