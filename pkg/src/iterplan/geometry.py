"""Planar geometry helpers and the road network."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import shortest_path

Point = tuple[float, float]


def dist(a: Point, b: Point) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def project_on_segment(p: Point, a: Point, b: Point) -> tuple[float, float]:
    """Return (parameter t in [0, 1], distance) of the closest point on segment ab."""
    ax, ay = a
    dx, dy = b[0] - ax, b[1] - ay
    L2 = dx * dx + dy * dy
    if L2 == 0:
        return 0.0, dist(p, a)
    t = ((p[0] - ax) * dx + (p[1] - ay) * dy) / L2
    t = min(1.0, max(0.0, t))
    return t, math.hypot(ax + t * dx - p[0], ay + t * dy - p[1])


def segment_hits_disc(a: Point, b: Point, center: Point, radius: float) -> float | None:
    """Smallest parameter t in [0, 1] at which a->b enters the disc, or None."""
    ax, ay = a
    dx, dy = b[0] - ax, b[1] - ay
    fx, fy = ax - center[0], ay - center[1]
    A = dx * dx + dy * dy
    C = fx * fx + fy * fy - radius * radius
    if C <= 0:
        return 0.0
    if A == 0:
        return None
    B = 2 * (fx * dx + fy * dy)
    disc = B * B - 4 * A * C
    if disc < 0:
        return None
    t = (-B - math.sqrt(disc)) / (2 * A)
    return t if 0.0 <= t <= 1.0 else None


def lerp(a: Point, b: Point, t: float) -> Point:
    return (a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t)


def point_key(p: Point, digits: int = 6) -> tuple[float, float]:
    return (round(p[0], digits) + 0.0, round(p[1], digits) + 0.0)


@dataclass(frozen=True)
class RoadNetwork:
    """Road geometry as polylines; junctions are shared vertices."""

    polylines: tuple[tuple[Point, ...], ...]
    tolerance: float = 0.001

    @cached_property
    def vertices(self) -> list[Point]:
        seen: dict[tuple[float, float], int] = {}
        out: list[Point] = []
        for line in self.polylines:
            for p in line:
                k = point_key(p)
                if k not in seen:
                    seen[k] = len(out)
                    out.append((float(p[0]), float(p[1])))
        return out

    @cached_property
    def _index(self) -> dict[tuple[float, float], int]:
        return {point_key(p): i for i, p in enumerate(self.vertices)}

    @cached_property
    def segments(self) -> list[tuple[int, int]]:
        segs = []
        for line in self.polylines:
            for a, b in zip(line, line[1:]):
                ia, ib = self._index[point_key(a)], self._index[point_key(b)]
                if ia != ib:
                    segs.append((ia, ib))
        return segs

    @cached_property
    def _vertex_distances(self) -> np.ndarray:
        n = len(self.vertices)
        rows, cols, w = [], [], []
        for a, b in self.segments:
            d = dist(self.vertices[a], self.vertices[b])
            rows += [a, b]
            cols += [b, a]
            w += [d, d]
        g = csr_matrix((w, (rows, cols)), shape=(n, n))
        return shortest_path(g, directed=False)

    @property
    def length(self) -> float:
        return sum(dist(self.vertices[a], self.vertices[b]) for a, b in self.segments)

    def locate(self, p: Point) -> tuple[int, float] | None:
        """(segment index, parameter) of the nearest road point within tolerance."""
        best = None
        for si, (a, b) in enumerate(self.segments):
            t, d = project_on_segment(p, self.vertices[a], self.vertices[b])
            if d <= self.tolerance and (best is None or d < best[2]):
                best = (si, t, d)
        return None if best is None else (best[0], best[1])

    def on_road(self, p: Point) -> bool:
        return self.locate(p) is not None

    def road_distance(self, p: Point, q: Point) -> float:
        """Shortest along-road distance between two on-road points."""
        lp, lq = self.locate(p), self.locate(q)
        if lp is None or lq is None:
            return math.inf
        if lp[0] == lq[0]:
            return dist(p, q)
        D = self._vertex_distances
        sa, sb = self.segments[lp[0]]
        ta, tb = self.segments[lq[0]]
        best = math.inf
        for u in (sa, sb):
            for w in (ta, tb):
                best = min(best, dist(p, self.vertices[u]) + D[u, w] + dist(self.vertices[w], q))
        return best
