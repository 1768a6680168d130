"""Line-segment geometry: CAL encoding, centerness, homographies, distances.

Coordinates follow the image convention: x to the right, y downward, origin at
the center of the top-left pixel.
"""
from __future__ import annotations

import math
from typing import Iterable, NamedTuple, Sequence

import numpy as np


class Point2(NamedTuple):
    x: float
    y: float


class LineSegment(NamedTuple):
    p1: Point2
    p2: Point2

    @classmethod
    def from_coords(cls, x1, y1, x2, y2) -> "LineSegment":
        return cls(Point2(float(x1), float(y1)), Point2(float(x2), float(y2)))

    @property
    def length(self) -> float:
        return math.hypot(self.p1.x - self.p2.x, self.p1.y - self.p2.y)

    @property
    def midpoint(self) -> Point2:
        return Point2(0.5 * (self.p1.x + self.p2.x), 0.5 * (self.p1.y + self.p2.y))

    def swapped(self) -> "LineSegment":
        return LineSegment(self.p2, self.p1)

    def as_array(self) -> np.ndarray:
        return np.array([[self.p1.x, self.p1.y], [self.p2.x, self.p2.y]], dtype=float)


class CalLine(NamedTuple):
    """Center, angle (radians, in [0, pi)) and length of a segment."""

    center: Point2
    theta: float
    rho: float


class Correspondence(NamedTuple):
    index_a: int
    index_b: int
    is_match: bool = True


class DegenerateSegmentError(ValueError):
    pass


class PointAtInfinityError(ValueError):
    """A warped endpoint left the affine plane; the segment must be discarded."""


class Homography:
    """Invertible 3x3 projective map, stored with m[2, 2] == 1."""

    def __init__(self, m):
        m = np.array(m, dtype=float)
        if m.shape != (3, 3):
            raise ValueError(f"homography must be 3x3, got {m.shape}")
        if abs(m[2, 2]) > 1e-12:
            m = m / m[2, 2]
        if abs(np.linalg.det(m)) <= 1e-9:
            raise ValueError("homography is not invertible")
        self.m = m

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    @classmethod
    def translation(cls, tx: float, ty: float) -> "Homography":
        return cls([[1, 0, tx], [0, 1, ty], [0, 0, 1]])

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.m))

    def __matmul__(self, other: "Homography") -> "Homography":
        return Homography(self.m @ other.m)

    def __repr__(self):
        return f"Homography({self.m.tolist()!r})"

    def apply(self, pts) -> np.ndarray:
        """Map an (N, 2) array of points; raises if any lands at infinity."""
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        h = np.c_[pts, np.ones(len(pts))] @ self.m.T
        if np.any(np.abs(h[:, 2]) <= 1e-9):
            raise PointAtInfinityError("point mapped to infinity")
        return h[:, :2] / h[:, 2:3]


def canonical_angle(theta: float) -> float:
    t = math.fmod(theta, math.pi)
    if t < 0:
        t += math.pi
    if t >= math.pi:  # fmod rounding at the boundary
        t = 0.0
    return t


def cal_to_endpoints(c: CalLine) -> LineSegment:
    h = 0.5 * c.rho
    dx, dy = h * math.cos(c.theta), h * math.sin(c.theta)
    cx, cy = c.center
    return LineSegment(Point2(cx + dx, cy + dy), Point2(cx - dx, cy - dy))


def endpoints_to_cal(s: LineSegment) -> CalLine:
    (x1, y1), (x2, y2) = s
    rho = math.hypot(x1 - x2, y1 - y2)
    if rho == 0.0:
        raise DegenerateSegmentError(f"zero-length segment {s}")
    dx, dy = x1 - x2, y1 - y2
    # pick the direction with dy > 0 (or dy == 0, dx > 0) so atan2 lands in [0, pi)
    # without a modulo, which keeps the result bit-identical under endpoint swap
    if dy < 0 or (dy == 0 and dx < 0):
        dx, dy = -dx, -dy
    theta = math.atan2(dy, dx)
    if theta >= math.pi:
        theta = 0.0
    return CalLine(Point2(0.5 * (x1 + x2), 0.5 * (y1 + y2)), theta, rho)


def centerness(p, s: LineSegment) -> float:
    """sqrt(min(d1, d2) / max(d1, d2)) for a point p on segment s."""
    d1 = math.hypot(p[0] - s.p1.x, p[1] - s.p1.y)
    d2 = math.hypot(p[0] - s.p2.x, p[1] - s.p2.y)
    hi = max(d1, d2)
    if hi == 0.0:
        return 1.0
    return math.sqrt(min(d1, d2) / hi)


def warp_segment(h: Homography, s: LineSegment) -> LineSegment:
    q = h.apply(np.asarray(s, dtype=float))
    return LineSegment(Point2(*q[0]), Point2(*q[1]))


def structural_distance(a: LineSegment, b: LineSegment) -> float:
    """Sum of squared endpoint distances under the better of the two pairings."""
    (ax1, ay1), (ax2, ay2) = a
    (bx1, by1), (bx2, by2) = b
    sq = lambda px, py, qx, qy: (px - qx) ** 2 + (py - qy) ** 2
    # pairwise sums of per-endpoint terms keep the result exactly symmetric
    direct = sq(ax1, ay1, bx1, by1) + sq(ax2, ay2, bx2, by2)
    crossed = sq(ax1, ay1, bx2, by2) + sq(ax2, ay2, bx1, by1)
    return min(direct, crossed)


def segments_to_array(segments: Iterable[Sequence]) -> np.ndarray:
    arr = np.asarray([np.asarray(s, dtype=float).reshape(2, 2) for s in segments], dtype=float)
    return arr.reshape(-1, 2, 2)


def array_to_segments(arr) -> list[LineSegment]:
    arr = np.asarray(arr, dtype=float).reshape(-1, 2, 2)
    return [LineSegment(Point2(*r[0]), Point2(*r[1])) for r in arr]


def pairwise_structural_distance(a, b) -> np.ndarray:
    """Vectorised structural_distance for (N, 2, 2) and (M, 2, 2) arrays -> (N, M)."""
    a = segments_to_array(a)
    b = segments_to_array(b)
    d11 = ((a[:, None, 0] - b[None, :, 0]) ** 2).sum(-1)
    d22 = ((a[:, None, 1] - b[None, :, 1]) ** 2).sum(-1)
    d12 = ((a[:, None, 0] - b[None, :, 1]) ** 2).sum(-1)
    d21 = ((a[:, None, 1] - b[None, :, 0]) ** 2).sum(-1)
    return np.minimum(d11 + d22, d12 + d21)


def max_endpoint_distance(a: LineSegment, b: LineSegment) -> float:
    """Largest endpoint displacement under the pairing that minimises it."""
    (ax1, ay1), (ax2, ay2) = a
    (bx1, by1), (bx2, by2) = b
    direct = max(math.hypot(ax1 - bx1, ay1 - by1), math.hypot(ax2 - bx2, ay2 - by2))
    crossed = max(math.hypot(ax1 - bx2, ay1 - by2), math.hypot(ax2 - bx1, ay2 - by1))
    return min(direct, crossed)


def label_correspondences(set_a, set_b, h: Homography, tol: float) -> list[Correspondence]:
    """Greedy one-to-one matching of warped ``set_a`` against ``set_b``.

    A pair is a candidate when every endpoint of ``h(a_i)`` lies within ``tol``
    pixels of its counterpart in ``b_j``. Candidates are accepted in ascending
    order of that distance, ties by (i, j). Segments that warp to infinity are
    skipped. Only matches are returned.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    cands = []
    for i, a in enumerate(set_a):
        try:
            wa = warp_segment(h, a)
        except PointAtInfinityError:
            continue
        for j, b in enumerate(set_b):
            d = max_endpoint_distance(wa, b)
            if d <= tol:
                cands.append((d, i, j))
    cands.sort()
    used_a, used_b, out = set(), set(), []
    for _, i, j in cands:
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        out.append(Correspondence(i, j, True))
    out.sort(key=lambda c: (c.index_a, c.index_b))
    return out


def clip_segment(s: LineSegment, xmin, ymin, xmax, ymax) -> LineSegment | None:
    """Liang-Barsky clip of a segment to an axis-aligned box; None if outside."""
    (x1, y1), (x2, y2) = s
    dx, dy = x2 - x1, y2 - y1
    t0, t1 = 0.0, 1.0
    for p, q in ((-dx, x1 - xmin), (dx, xmax - x1), (-dy, y1 - ymin), (dy, ymax - y1)):
        if p == 0:
            if q < 0:
                return None
            continue
        r = q / p
        if p < 0:
            t0 = max(t0, r)
        else:
            t1 = min(t1, r)
        if t0 > t1:
            return None
    return LineSegment(Point2(x1 + t0 * dx, y1 + t0 * dy), Point2(x1 + t1 * dx, y1 + t1 * dy))


def canonical_direction(s: LineSegment) -> LineSegment:
    """Order endpoints so p1 has the smaller (y, x)."""
    if (s.p2.y, s.p2.x) < (s.p1.y, s.p1.x):
        return s.swapped()
    return s
