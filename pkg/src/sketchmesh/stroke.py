"""User stroke primitive: an ordered 3D polyline with a role tag."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

KINDS = ("silhouette", "on_surface", "handle_target")


@dataclass(frozen=True)
class Stroke:
    points: np.ndarray
    kind: str = "on_surface"

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        if pts.shape[1] != 3:
            raise ValueError(f"stroke points must be (n, 3), got {pts.shape}")
        if self.kind not in KINDS:
            raise ValueError(f"unknown stroke kind {self.kind!r}")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    def arc_length(self) -> float:
        if len(self) < 2:
            return 0.0
        return float(np.linalg.norm(np.diff(self.points, axis=0), axis=1).sum())


def sample_along(strokes, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` points distributed over the strokes' polylines, uniform in
    arc length (single-point strokes contribute their lone point)."""
    segs_a, segs_b, lens = [], [], []
    singles = []
    for s in strokes:
        p = s.points
        if len(p) < 2:
            singles.append(p[0])
            continue
        a, b = p[:-1], p[1:]
        seg_len = np.linalg.norm(b - a, axis=1)
        keep = seg_len > 0
        segs_a.append(a[keep])
        segs_b.append(b[keep])
        lens.append(seg_len[keep])
    if not lens:
        if not singles:
            raise ValueError("no stroke geometry to sample")
        pick = rng.integers(0, len(singles), size=n)
        return np.asarray(singles)[pick]
    a = np.vstack(segs_a)
    b = np.vstack(segs_b)
    lens = np.concatenate(lens)
    cdf = np.cumsum(lens)
    u = rng.random(n) * cdf[-1]
    idx = np.searchsorted(cdf, u)
    t = (u - (cdf[idx] - lens[idx])) / lens[idx]
    return a[idx] + t[:, None] * (b[idx] - a[idx])
