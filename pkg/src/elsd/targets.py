"""Ground-truth supervision maps at the detector's output resolution.

All maps are plain float arrays laid out (C, H, W); a segment's midpoint p maps
to p / s on the output grid.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .geom import LineSegment, endpoints_to_cal
from .raster import raster_segment

log = logging.getLogger(__name__)


@dataclass
class TargetMaps:
    midpoint: np.ndarray      # (1, H, W)
    centerness: np.ndarray    # (1, H, W)
    geo: np.ndarray           # (2, H, W): theta / pi, rho / s
    offset: np.ndarray        # (2, H, W): midpoint minus peak pixel, (x, y)
    peak_mask: np.ndarray     # (1, H, W) bool
    downsample: int = 2
    n_skipped: int = 0
    n_collisions: int = 0

    @property
    def n_peaks(self) -> int:
        return int(self.peak_mask.sum())


def _size(out_size) -> tuple[int, int]:
    if np.isscalar(out_size):
        return int(out_size), int(out_size)
    h, w = out_size
    return int(h), int(w)


def _neighbourhood(mx: float, my: float, h: int, w: int, sigma: float):
    """The floor/ceil pixels around (mx, my) with normalized Gaussian weights.

    Returns a list of (row, col, value) sorted by (row, col); the max value is 1.
    Empty if no pixel of the set lies in the image.
    """
    xs = sorted({math.floor(mx), math.ceil(mx)})
    ys = sorted({math.floor(my), math.ceil(my)})
    cells = [(r, c) for r in ys for c in xs if 0 <= r < h and 0 <= c < w]
    if not cells:
        return []
    g = [math.exp(-((c - mx) ** 2 + (r - my) ** 2) / (2 * sigma ** 2)) for r, c in cells]
    top = max(g)
    return [(r, c, gi / top) for (r, c), gi in zip(cells, g)]


def _peak(cells):
    # first cell (smallest row, then col) among those with the maximal weight
    best = max(v for _, _, v in cells)
    for r, c, v in cells:
        if v == best:
            return r, c


def build_midpoint_map(segments, out_size, s: int = 2, sigma: float = 1.0) -> np.ndarray:
    """Midpoint confidence map: normalized Gaussians on the 4 floor/ceil pixels, merged by max."""
    h, w = _size(out_size)
    out = np.zeros((1, h, w))
    skipped = 0
    for seg in segments:
        m = LineSegment(*seg).midpoint
        cells = _neighbourhood(m.x / s, m.y / s, h, w, sigma)
        if not cells:
            skipped += 1
            continue
        for r, c, v in cells:
            out[0, r, c] = max(out[0, r, c], v)
    if skipped:
        log.warning("build_midpoint_map: skipped %d segment(s) with midpoint outside the map", skipped)
    return out


def _projected_centerness(rr, cc, x1, y1, x2, y2) -> np.ndarray:
    dx, dy = x2 - x1, y2 - y1
    l2 = dx * dx + dy * dy
    t = np.clip(((cc - x1) * dx + (rr - y1) * dy) / l2, 0.0, 1.0)
    # distances from the projection to the endpoints are t*L and (1-t)*L
    lo = np.minimum(t, 1 - t)
    hi = np.maximum(t, 1 - t)
    return np.sqrt(lo / hi)


def build_centerness_map(segments, out_size, s: int = 2) -> np.ndarray:
    h, w = _size(out_size)
    out = np.zeros((1, h, w))
    for seg in segments:
        (x1, y1), (x2, y2) = np.asarray(seg, dtype=float).reshape(2, 2) / s
        if x1 == x2 and y1 == y2:
            continue
        rr, cc = raster_segment((x1, y1), (x2, y2), (h, w))
        if len(rr):
            vals = _projected_centerness(rr, cc, x1, y1, x2, y2)
            out[0, rr, cc] = np.maximum(out[0, rr, cc], vals)
    return out


def build_geo_offset_maps(segments, out_size, s: int = 2, sigma: float = 1.0):
    """Geometry and fine-offset targets around each segment's midpoint.

    Every pixel of the floor/ceil neighbourhood receives the owning segment's
    (theta / pi, rho / s) and its own offset to the midpoint, so decoding at any
    of them is exact. ``peak_mask`` marks only the confidence-1 pixel, which is
    where the regression losses apply. A pixel claimed by several segments goes
    to the one with the higher midpoint confidence there, then the longer one.

    Returns (geo, offset, peak_mask, n_collisions), where a collision is two
    segments sharing a peak pixel.
    """
    h, w = _size(out_size)
    geo = np.zeros((2, h, w))
    off = np.zeros((2, h, w))
    mask = np.zeros((1, h, w), dtype=bool)
    owner: dict = {}   # (r, c) -> (confidence, rho, segment index)
    cals, peaks = [], []
    collisions = 0
    peak_owner: dict = {}
    for k, seg in enumerate(segments):
        cal = endpoints_to_cal(LineSegment(*seg))
        mx, my = cal.center.x / s, cal.center.y / s
        cells = _neighbourhood(mx, my, h, w, sigma)
        cals.append((cal, mx, my))
        if not cells:
            peaks.append(None)
            continue
        pk = _peak(cells)
        peaks.append(pk)
        if pk in peak_owner:
            collisions += 1
        peak_owner.setdefault(pk, []).append(k)
        for r, c, v in cells:
            old = owner.get((r, c))
            if old is None or (v, cal.rho) > old[:2]:
                owner[(r, c)] = (v, cal.rho, k)
    for (r, c), (_, _, k) in owner.items():
        cal, mx, my = cals[k]
        geo[:, r, c] = (cal.theta / math.pi, cal.rho / s)
        off[:, r, c] = (mx - c, my - r)
    for k, pk in enumerate(peaks):
        if pk is not None and owner[pk][2] == k:
            mask[0, pk[0], pk[1]] = True
    if collisions:
        log.warning("build_geo_offset_maps: %d peak collision(s)", collisions)
    return geo, off, mask, collisions


def build_targets(segments, out_size, s: int = 2, sigma: float = 1.0) -> TargetMaps:
    h, w = _size(out_size)
    segments = list(segments)
    skipped = 0
    for seg in segments:
        m = LineSegment(*seg).midpoint
        if not _neighbourhood(m.x / s, m.y / s, h, w, sigma):
            skipped += 1
    geo, off, mask, coll = build_geo_offset_maps(segments, (h, w), s, sigma)
    return TargetMaps(
        midpoint=build_midpoint_map(segments, (h, w), s, sigma),
        centerness=build_centerness_map(segments, (h, w), s),
        geo=geo, offset=off, peak_mask=mask,
        downsample=s, n_skipped=skipped, n_collisions=coll,
    )
