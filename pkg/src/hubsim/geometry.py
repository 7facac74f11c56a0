"""Planar geometry helpers shared by the scenario, router and engine layers.

Polygons are tuples of ``(x, y)`` vertex tuples without a repeated closing
vertex. Segments are ``((x0, y0), (x1, y1))``.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np
from shapely.geometry import LineString, Point, Polygon
from shapely.ops import unary_union

Point2 = tuple[float, float]
Segment = tuple[Point2, Point2]
Ring = tuple[Point2, ...]

BOUNDARY_TOL = 1e-6


def signed_area(ring: Sequence[Point2]) -> float:
    """Shoelace area; positive for counter-clockwise rings."""
    total = 0.0
    n = len(ring)
    for i in range(n):
        x0, y0 = ring[i]
        x1, y1 = ring[(i + 1) % n]
        total += x0 * y1 - x1 * y0
    return 0.5 * total


def segment_length(seg: Segment) -> float:
    (x0, y0), (x1, y1) = seg
    return math.hypot(x1 - x0, y1 - y0)


def midpoint(seg: Segment) -> Point2:
    (x0, y0), (x1, y1) = seg
    return (0.5 * (x0 + x1), 0.5 * (y0 + y1))


def closest_point_on_segment(p: Point2, a: Point2, b: Point2) -> Point2:
    ax, ay = a
    dx, dy = b[0] - ax, b[1] - ay
    den = dx * dx + dy * dy
    if den == 0.0:
        return a
    t = ((p[0] - ax) * dx + (p[1] - ay) * dy) / den
    t = min(1.0, max(0.0, t))
    return (ax + t * dx, ay + t * dy)


def point_segment_distance(p: Point2, a: Point2, b: Point2) -> float:
    q = closest_point_on_segment(p, a, b)
    return math.hypot(p[0] - q[0], p[1] - q[1])


def ring_edges(ring: Sequence[Point2]) -> list[Segment]:
    n = len(ring)
    return [(tuple(ring[i]), tuple(ring[(i + 1) % n])) for i in range(n)]


def to_polygon(ring: Sequence[Point2]) -> Polygon:
    return Polygon(ring)


def union(rings: Iterable[Sequence[Point2]]):
    return unary_union([Polygon(r) for r in rings])


def segment_geom(seg: Segment) -> LineString:
    return LineString(seg)


def point_geom(p: Point2) -> Point:
    return Point(p)


def polygon_bounds(rings: Iterable[Sequence[Point2]]) -> tuple[float, float, float, float]:
    pts = np.array([v for r in rings for v in r], dtype=float)
    return (float(pts[:, 0].min()), float(pts[:, 1].min()),
            float(pts[:, 0].max()), float(pts[:, 1].max()))


def subtract_intervals(edge: Segment, cuts: Iterable[Segment], tol: float = BOUNDARY_TOL) -> list[Segment]:
    """Remove the parts of ``edge`` covered by collinear ``cuts``.

    Used to open portal gaps in walkable boundary walls.
    """
    (ax, ay), (bx, by) = edge
    dx, dy = bx - ax, by - ay
    length = math.hypot(dx, dy)
    if length == 0.0:
        return []
    ux, uy = dx / length, dy / length
    spans = []
    for (c0, c1) in cuts:
        if (point_segment_distance(c0, edge[0], edge[1]) > tol
                or point_segment_distance(c1, edge[0], edge[1]) > tol):
            continue
        s0 = (c0[0] - ax) * ux + (c0[1] - ay) * uy
        s1 = (c1[0] - ax) * ux + (c1[1] - ay) * uy
        lo, hi = sorted((s0, s1))
        spans.append((max(0.0, lo), min(length, hi)))
    if not spans:
        return [edge]
    spans.sort()
    out = []
    cursor = 0.0
    for lo, hi in spans:
        if lo > cursor + tol:
            out.append(((ax + cursor * ux, ay + cursor * uy), (ax + lo * ux, ay + lo * uy)))
        cursor = max(cursor, hi)
    if cursor < length - tol:
        out.append(((ax + cursor * ux, ay + cursor * uy), (bx, by)))
    return out
