"""Supercover line rasterization: every pixel whose unit square meets the segment."""
from __future__ import annotations

import math

import numpy as np


def raster_segment(p1, p2, shape) -> tuple[np.ndarray, np.ndarray]:
    """Rows and cols of pixels crossed by segment p1-p2 inside an (H, W) image.

    Pixel (r, c) covers [c - 0.5, c + 0.5] x [r - 0.5, r + 0.5]. Touching the
    square boundary counts as crossing it.
    """
    h, w = shape
    x1, y1 = float(p1[0]), float(p1[1])
    x2, y2 = float(p2[0]), float(p2[1])
    c_lo = max(math.floor(min(x1, x2) - 0.5), 0)
    c_hi = min(math.ceil(max(x1, x2) + 0.5), w - 1)
    r_lo = max(math.floor(min(y1, y2) - 0.5), 0)
    r_hi = min(math.ceil(max(y1, y2) + 0.5), h - 1)
    if c_lo > c_hi or r_lo > r_hi:
        return np.zeros(0, int), np.zeros(0, int)
    rr, cc = np.mgrid[r_lo:r_hi + 1, c_lo:c_hi + 1]
    rr, cc = rr.ravel(), cc.ravel()
    keep = (cc + 0.5 >= min(x1, x2)) & (cc - 0.5 <= max(x1, x2))
    keep &= (rr + 0.5 >= min(y1, y2)) & (rr - 0.5 <= max(y1, y2))
    dx, dy = x2 - x1, y2 - y1
    n = math.hypot(dx, dy)
    if n > 0:
        nx, ny = -dy / n, dx / n
        half = 0.5 * (abs(nx) + abs(ny))
        keep &= np.abs(nx * (cc - x1) + ny * (rr - y1)) <= half + 1e-12
    return rr[keep], cc[keep]


def raster_mask(segments, shape, scale: float = 1.0) -> np.ndarray:
    """Boolean (H, W) union of rasterized segments, coordinates multiplied by ``scale``."""
    mask = np.zeros(shape, dtype=bool)
    for s in segments:
        (x1, y1), (x2, y2) = np.asarray(s, dtype=float).reshape(2, 2) * scale
        r, c = raster_segment((x1, y1), (x2, y2), shape)
        mask[r, c] = True
    return mask
