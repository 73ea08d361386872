"""Wavefront OBJ import/export.

ASCII ``v``/``f`` records only, 1-based indices. Coordinates are written
with 9 significant digits through a fixed format so that identical meshes
always serialize to identical bytes (session replay compares OBJ output
byte-for-byte).
"""

from __future__ import annotations

import numpy as np

from .mesh import TriMesh


def format_obj(mesh: TriMesh) -> str:
    lines = []
    for x, y, z in mesh.positions:
        lines.append(f"v {x:.9g} {y:.9g} {z:.9g}")
    for a, b, c in mesh.faces:
        lines.append(f"f {a + 1} {b + 1} {c + 1}")
    return "\n".join(lines) + "\n"


def write_obj(mesh: TriMesh, path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(format_obj(mesh))


def read_obj(path) -> TriMesh:
    positions = []
    faces = []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                positions.append([float(v) for v in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(tok.split("/")[0]) - 1 for tok in parts[1:]]
                if len(idx) != 3:
                    raise ValueError("only triangle faces are supported")
                faces.append(idx)
    return TriMesh(np.array(positions), np.array(faces, dtype=np.int32))
