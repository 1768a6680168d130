"""Turn detector maps into scored line segments.

Pipeline: fuse midpoint and centerness maps (non-centerness suppression),
pick strict local maxima above a score threshold, refine each peak with its
fine offset and read angle/length from the geometry maps.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .geom import CalLine, LineSegment, Point2, cal_to_endpoints

log = logging.getLogger(__name__)

NCS_EXPONENT = 0.5


class ScoredSegment(NamedTuple):
    segment: LineSegment
    score: float


@dataclass
class DecodeConfig:
    score_thresh: float = 0.22
    nms_window: int = 3
    max_k: int = 64
    downsample: int = 2
    ncs: bool = True


def _plane(m) -> np.ndarray:
    m = np.asarray(getattr(m, "data", m), dtype=float)
    while m.ndim > 2:
        if m.shape[0] != 1:
            raise ValueError(f"expected a single-channel map, got shape {m.shape}")
        m = m[0]
    return m


def ncs_fuse(midpoint, centerness) -> np.ndarray:
    """P_mid * P_cen ** 0.5, pointwise."""
    mid, cen = _plane(midpoint), _plane(centerness)
    if mid.shape != cen.shape:
        raise ValueError(f"midpoint {mid.shape} and centerness {cen.shape} maps differ in shape")
    return mid * np.power(np.clip(cen, 0.0, None), NCS_EXPONENT)


def extract_peaks(fused, score_thresh: float, nms_window: int = 3, max_k: int = 64):
    """Strict local maxima of ``fused`` with score >= threshold.

    Returns [((row, col), score)] sorted by descending score, ties by (row, col),
    truncated to ``max_k``.
    """
    if nms_window % 2 != 1:
        raise ValueError("nms_window must be odd")
    f = _plane(fused)
    r = nms_window // 2
    padded = np.pad(f, r, constant_values=-np.inf)
    # strict maximum: larger than every other cell in the window
    fp = np.lib.stride_tricks.sliding_window_view(padded, (nms_window, nms_window))
    flat = fp.reshape(f.shape + (-1,)).copy()
    flat[..., (nms_window * nms_window) // 2] = -np.inf
    others = flat.max(axis=-1)
    keep = (f > others) & (f >= score_thresh)
    rows, cols = np.nonzero(keep)
    scores = f[rows, cols]
    order = np.lexsort((cols, rows, -scores))[:max_k]
    return [((int(rows[i]), int(cols[i])), float(scores[i])) for i in order]


def _maps(maps):
    get = (lambda k: getattr(maps, k)) if not isinstance(maps, dict) else maps.__getitem__
    out = {}
    for k in ("midpoint", "centerness", "geo", "offset"):
        v = get(k)
        v = np.asarray(getattr(v, "data", v), dtype=float)
        if v.ndim == 4:
            if v.shape[0] != 1:
                raise ValueError("decode_segments works on one image at a time")
            v = v[0]
        out[k] = v
    return out


def decode_segments(maps, cfg: DecodeConfig | None = None, stats: dict | None = None) -> list[ScoredSegment]:
    """Decode one image's maps (DetectorMaps, TargetMaps or a dict) into segments.

    Coordinates are returned at input-image scale (map coordinates times the
    downsampling factor). Peaks with non-positive length are dropped and counted
    in ``stats["discarded"]``.
    """
    cfg = cfg or DecodeConfig()
    m = _maps(maps)
    fused = ncs_fuse(m["midpoint"], m["centerness"]) if cfg.ncs else _plane(m["midpoint"])
    peaks = extract_peaks(fused, cfg.score_thresh, cfg.nms_window, cfg.max_k)
    s = cfg.downsample
    out, discarded = [], 0
    for (i, j), score in peaks:
        theta = float(m["geo"][0, i, j]) * math.pi
        rho = float(m["geo"][1, i, j])
        if not rho > 0:
            discarded += 1
            continue
        cx = j + float(m["offset"][0, i, j])
        cy = i + float(m["offset"][1, i, j])
        seg = cal_to_endpoints(CalLine(Point2(cx, cy), theta, rho))
        seg = LineSegment(Point2(seg.p1.x * s, seg.p1.y * s), Point2(seg.p2.x * s, seg.p2.y * s))
        out.append(ScoredSegment(seg, score))
    if discarded:
        log.debug("decode_segments: discarded %d peak(s) with non-positive length", discarded)
    if stats is not None:
        stats["discarded"] = stats.get("discarded", 0) + discarded
    return out
