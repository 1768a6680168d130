"""Training objectives for the detector and descriptor branches.

Map losses take predictions as Grids shaped (N, C, H, W) (or (C, H, W)) and
targets as arrays of the same shape. Per-image losses are averaged over the
batch.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Grid

CLAMP = 1e-7


@dataclass
class LossWeights:
    lambda_p: float = 0.9
    lambda_d: float = 0.1
    lambda_mid: float = 25.0
    lambda_cen: float = 10.0
    lambda_geo: float = 1.0
    lambda_off: float = 3.0
    lambda_ang: float = 300.0
    lambda_len: float = 10.0
    alpha: float = 2.0
    beta: float = 4.0
    margin: float = 0.5
    bce_pos_weight: float | None = None   # None: per-image #neg / #pos, capped
    bce_pos_weight_cap: float = 100.0
    focal: bool = True                    # False: plain BCE on the midpoint map


@dataclass
class TrainSchedule:
    total_epochs: int
    current_epoch: int = 0

    def __post_init__(self):
        if not 0 <= self.current_epoch <= self.total_epochs or self.total_epochs <= 0:
            raise ValueError(f"need 0 <= e <= E and E > 0, got e={self.current_epoch}, E={self.total_epochs}")

    @property
    def lambda_dynamic(self) -> float:
        return math.sqrt(self.current_epoch / self.total_epochs)

    @property
    def lambda_static(self) -> float:
        return 1.0 - self.lambda_dynamic


def _batch(x):
    x = ag.as_grid(x)
    return ag.reshape(x, (1,) + x.shape) if x.ndim == 3 else x


def _target(t, like: Grid) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if t.ndim == 3:
        t = t[None]
    if t.shape != like.shape:
        raise ag.ShapeError(f"prediction {like.shape} vs target {t.shape}")
    return t


def _clamped(p: Grid) -> Grid:
    return ag.clip(p, CLAMP, 1.0 - CLAMP)


def focal_midpoint_loss(pred, target, alpha: float = 2.0, beta: float = 4.0) -> Grid:
    """Penalty-reduced pixelwise focal loss, normalised by the number of exact-1 targets."""
    pred = _batch(pred)
    t = _target(target, pred)
    p = _clamped(pred)
    pos = (t == 1.0).astype(float)
    n_pos = pos.reshape(len(t), -1).sum(1)
    pos_term = ag.pow(1.0 - p, alpha) * ag.log(p) * pos
    neg_term = ag.pow(p, alpha) * ag.log(1.0 - p) * ((1.0 - t) ** beta * (1.0 - pos))
    per_px = pos_term + neg_term
    per_img = ag.sum(ag.reshape(per_px, (len(t), -1)), axis=1)
    scale = np.where(n_pos > 0, -1.0 / np.maximum(n_pos, 1.0), 0.0) / len(t)
    return ag.sum(per_img * scale)


def bce_loss(pred, target, pos_weight=1.0) -> Grid:
    """Mean binary cross entropy; ``pos_weight`` (scalar or per-image) scales pixels with target > 0."""
    pred = _batch(pred)
    t = _target(target, pred)
    p = _clamped(pred)
    pw = np.asarray(pos_weight, dtype=float)
    if pw.ndim == 1:
        pw = pw.reshape(-1, 1, 1, 1)
    w = np.where(t > 0, pw, 1.0)
    per_px = (ag.log(p) * t + ag.log(1.0 - p) * (1.0 - t)) * (-w)
    return ag.mean(per_px)


def auto_pos_weight(target, cap: float = 100.0) -> np.ndarray:
    """Per-image #zero / #nonzero pixel ratio, capped."""
    t = np.asarray(target, dtype=float)
    if t.ndim == 3:
        t = t[None]
    flat = t.reshape(len(t), -1)
    pos = (flat > 0).sum(1)
    neg = flat.shape[1] - pos
    return np.minimum(np.where(pos > 0, neg / np.maximum(pos, 1), 1.0), cap)


def centerness_loss(pred, target, pos_weight=None, cap: float = 100.0) -> Grid:
    if pos_weight is None:
        pos_weight = auto_pos_weight(target, cap)
    return bce_loss(pred, target, pos_weight)


def smooth_l1(x) -> Grid:
    x = ag.as_grid(x)
    a = ag.abs(x)
    return ag.where(a.data < 1.0, 0.5 * x * x, a - 0.5)


def _peak_index(mask):
    m = np.asarray(mask, dtype=bool)
    if m.ndim == 3:
        m = m[None]
    n, _, r, c = np.nonzero(m)
    counts = np.bincount(n, minlength=m.shape[0]).astype(float)
    # per-peak weight: 1 / (peaks in its image * batch size)
    wts = 1.0 / (counts[n] * m.shape[0]) if len(n) else np.zeros(0)
    return (n, r, c), wts


def _gather(x: Grid, ch: int, idx) -> Grid:
    n, r, c = idx
    return ag.index(x, (n, np.full_like(n, ch), r, c))


def geo_loss(pred_geo, target_geo, peak_mask, w: LossWeights | None = None) -> Grid:
    """lambda_ang * L1(theta) + lambda_len * smoothL1(rho), averaged over peaks."""
    w = w or LossWeights()
    pred = _batch(pred_geo)
    t = _target(target_geo, pred)
    idx, wts = _peak_index(peak_mask)
    if len(wts) == 0:
        return ag.sum(pred * 0.0)
    th = _gather(pred, 0, idx) - t[idx[0], 0, idx[1], idx[2]]
    rh = _gather(pred, 1, idx) - t[idx[0], 1, idx[1], idx[2]]
    per = ag.abs(th) * w.lambda_ang + smooth_l1(rh) * w.lambda_len
    return ag.sum(per * wts)


def offset_loss(pred_off, target_off, peak_mask) -> Grid:
    """Mean over peaks of |dx| + |dy|."""
    pred = _batch(pred_off)
    t = _target(target_off, pred)
    idx, wts = _peak_index(peak_mask)
    if len(wts) == 0:
        return ag.sum(pred * 0.0)
    dx = _gather(pred, 0, idx) - t[idx[0], 0, idx[1], idx[2]]
    dy = _gather(pred, 1, idx) - t[idx[0], 1, idx[1], idx[2]]
    return ag.sum((ag.abs(dx) + ag.abs(dy)) * wts)


def combine_detector(mid, cen, geo, off, w: LossWeights | None = None):
    w = w or LossWeights()
    return mid * w.lambda_mid + cen * w.lambda_cen + geo * w.lambda_geo + off * w.lambda_off


def _stack_targets(targets):
    if isinstance(targets, (list, tuple)):
        return {k: np.stack([getattr(t, k) for t in targets]) for k in
                ("midpoint", "centerness", "geo", "offset", "peak_mask")}
    return {k: getattr(targets, k) for k in ("midpoint", "centerness", "geo", "offset", "peak_mask")}


def detector_components(maps, targets, w: LossWeights | None = None) -> dict[str, Grid]:
    """The four weighted-sum inputs. ``targets`` is a TargetMaps or a list of them."""
    w = w or LossWeights()
    t = _stack_targets(targets)
    if w.focal:
        mid = focal_midpoint_loss(maps.midpoint, t["midpoint"], w.alpha, w.beta)
    else:
        mid = bce_loss(maps.midpoint, t["midpoint"], 1.0)
    cen = centerness_loss(maps.centerness, t["centerness"], w.bce_pos_weight, w.bce_pos_weight_cap)
    return {
        "mid": mid,
        "cen": cen,
        "geo": geo_loss(maps.geo, t["geo"], t["peak_mask"], w),
        "off": offset_loss(maps.offset, t["offset"], t["peak_mask"]),
    }


def detector_loss(maps, targets, w: LossWeights | None = None) -> Grid:
    c = detector_components(maps, targets, w)
    return combine_detector(c["mid"], c["cen"], c["geo"], c["off"], w)


@dataclass
class TripletResult:
    loss: Grid
    n_anchors: int
    empty: bool = field(default=False)


def triplet_loss(desc_a, desc_b, matches, m: float = 0.5) -> TripletResult:
    """Hard-negative triplet loss from A to B.

    ``desc_a`` (Na, d) and ``desc_b`` (Nb, d) are unit-norm Grids; ``matches``
    lists (i, j) pairs (or Correspondence records). Each anchor's negative is
    the most similar descriptor in B other than its positive; without one, the
    negative similarity is taken as -1.
    """
    pairs = [(int(c[0]), int(c[1])) for c in matches if (len(c) < 3 or c[2])]
    da, db = ag.as_grid(desc_a), ag.as_grid(desc_b)
    if not pairs:
        return TripletResult(ag.Grid(0.0), 0, empty=True)
    ia = np.array([i for i, _ in pairs])
    jb = np.array([j for _, j in pairs])
    sim = ag.matmul(ag.index(da, ia), ag.transpose(db, (1, 0)))  # (N, Nb)
    pos = ag.index(sim, (np.arange(len(pairs)), jb))
    nb = db.shape[0]
    if nb > 1:
        block = np.zeros(sim.shape)
        block[np.arange(len(pairs)), jb] = -np.inf
        neg = ag.amax(sim + block, axis=1)
    else:
        neg = ag.Grid(np.full(len(pairs), -1.0))
    hinge = ag.relu(m - pos + neg)
    return TripletResult(ag.mean(hinge), len(pairs))


def descriptor_loss(static_ab, static_ba, dynamic_ab, dynamic_ba, sched: TrainSchedule) -> Grid:
    ld, ls = sched.lambda_dynamic, sched.lambda_static
    return (ag.as_grid(dynamic_ab) + dynamic_ba) * ld + (ag.as_grid(static_ab) + static_ba) * ls


def total_loss(det_a, det_b, desc, w: LossWeights | None = None) -> Grid:
    w = w or LossWeights()
    return (ag.as_grid(det_a) + det_b) * w.lambda_p + ag.as_grid(desc) * w.lambda_d
