"""Detection and matching metrics.

sAP follows the wireframe-parsing convention: coordinates rescaled to a
128-pixel frame, a prediction is a true positive when its structural distance
(sum of squared endpoint distances, best pairing) to the nearest unmatched
ground truth of its image is below the threshold.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .geom import pairwise_structural_distance, segments_to_array
from .raster import raster_mask

SAP_THRESHOLDS = (5, 10, 15)


@dataclass
class MatchScores:
    precision: float = 0.0
    recall: float = 0.0
    f_score: float = 0.0


@dataclass
class EvalReport:
    sap: dict = field(default_factory=dict)
    ap_h: float = 0.0
    f_h: float = 0.0
    midpoint_ap: float = 0.0
    match: MatchScores = field(default_factory=MatchScores)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sap"] = {str(k): v for k, v in self.sap.items()}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _pred_arrays(preds_img):
    """(segments (N, 2, 2), scores (N,)) from ScoredSegments or (seg, score) pairs."""
    if len(preds_img) == 0:
        return np.zeros((0, 2, 2)), np.zeros(0)
    segs = segments_to_array([p[0] for p in preds_img])
    scores = np.array([float(p[1]) for p in preds_img])
    return segs, scores


def ap_from_pr(recall, precision) -> float:
    """Area under the precision-envelope PR curve; points in ranking order."""
    r = np.concatenate([[0.0], np.asarray(recall, dtype=float), [1.0]])
    p = np.concatenate([[0.0], np.asarray(precision, dtype=float), [0.0]])
    order = np.argsort(r[1:-1], kind="stable") + 1
    r[1:-1], p[1:-1] = r[order], p[order]
    for i in range(len(p) - 2, -1, -1):
        p[i] = max(p[i], p[i + 1])
    i = np.nonzero(r[1:] != r[:-1])[0]
    return float(np.sum((r[i + 1] - r[i]) * p[i + 1]))


def _ranked_tp(preds, gts, dist_fn, theta):
    items = []
    for k, pi in enumerate(preds):
        segs, scores = _pred_arrays(pi)
        for n in range(len(scores)):
            items.append((-scores[n], k, n))
    items.sort()
    dists = []
    for k, (pi, gi) in enumerate(zip(preds, gts)):
        segs, _ = _pred_arrays(pi)
        g = segments_to_array(gi)
        dists.append(dist_fn(segs, g) if len(segs) and len(g) else np.zeros((len(segs), len(g))))
    used = [np.zeros(len(g), dtype=bool) for g in gts]
    tp = np.zeros(len(items))
    for r, (_, k, n) in enumerate(items):
        d = dists[k]
        if d.shape[1] == 0:
            continue
        cand = np.where(used[k], np.inf, d[n])
        j = int(np.argmin(cand))
        if cand[j] < theta:
            used[k][j] = True
            tp[r] = 1
    return tp


def _pr(preds, gts, dist_fn, theta, scale):
    n_gt = sum(len(g) for g in gts)
    if n_gt == 0:
        raise ValueError("no ground-truth segments")
    if len(preds) != len(gts):
        raise ValueError("predictions and ground truth cover different numbers of images")
    preds = [[(np.asarray(p[0], dtype=float) * scale, p[1]) for p in pi] for pi in preds]
    gts = [segments_to_array(g) * scale if len(g) else np.zeros((0, 2, 2)) for g in gts]
    ctp = np.cumsum(_ranked_tp(preds, gts, dist_fn, theta))
    return ctp / np.arange(1, len(ctp) + 1), ctp / n_gt


def _ap(preds, gts, dist_fn, theta, scale):
    precision, recall = _pr(preds, gts, dist_fn, theta, scale)
    if len(precision) == 0:
        return 0.0
    return ap_from_pr(recall, precision)


def structural_pr(preds, gts, theta: float = 10.0, eval_size: int = 128, image_size: int = 64):
    """(precision, recall) arrays at each rank of the global score ordering."""
    return _pr(preds, gts, pairwise_structural_distance, theta, eval_size / image_size)


def structural_ap(preds, gts, theta: float = 10.0, eval_size: int = 128, image_size: int = 64) -> float:
    """sAP over a dataset. ``preds[k]`` holds (segment, score) items for image k."""
    return _ap(preds, gts, pairwise_structural_distance, theta, eval_size / image_size)


def _midpoint_dist(a, b):
    ma = a.mean(axis=1)
    mb = b.mean(axis=1)
    return ((ma[:, None] - mb[None]) ** 2).sum(-1)


def midpoint_ap(preds, gts, theta: float = 10.0, eval_size: int = 128, image_size: int = 64) -> float:
    return _ap(preds, gts, _midpoint_dist, theta, eval_size / image_size)


def heatmap_ap_f(preds, gts, raster_size: int = 128, score_thresholds=None, image_size: int = 64):
    """Pixel-level AP^H and F^H over rasterized lines.

    For each threshold, predicted lines with score >= threshold are rasterized
    and compared pixel by pixel with the rasterized ground truth; counts are
    pooled over images. Thresholds where nothing is predicted contribute no
    PR point.
    """
    if score_thresholds is None:
        score_thresholds = np.linspace(0.0, 1.0, 20)
    scale = raster_size / image_size
    shape = (raster_size, raster_size)
    gt_masks = [raster_mask(g, shape, scale) for g in gts]
    n_gt = sum(int(m.sum()) for m in gt_masks)
    rs, ps, fs = [], [], []
    for t in score_thresholds:
        tp = npred = 0
        for pi, gm in zip(preds, gt_masks):
            keep = [p[0] for p in pi if float(p[1]) >= t]
            pm = raster_mask(keep, shape, scale)
            tp += int((pm & gm).sum())
            npred += int(pm.sum())
        if npred == 0:
            continue
        p = tp / npred
        r = tp / n_gt if n_gt else 0.0
        rs.append(r)
        ps.append(p)
        fs.append(2 * p * r / (p + r) if p + r > 0 else 0.0)
    if not rs:
        return 0.0, 0.0
    # PR points in descending-threshold order are in ascending-recall order
    order = np.argsort(rs, kind="stable")
    return ap_from_pr(np.asarray(rs)[order], np.asarray(ps)[order]), float(max(fs))


def match_lines(desc_a, desc_b) -> list[tuple[int, int]]:
    """Mutual nearest neighbours under cosine similarity; ties go to the lower index."""
    a = np.asarray(getattr(desc_a, "data", desc_a), dtype=float)
    b = np.asarray(getattr(desc_b, "data", desc_b), dtype=float)
    if len(a) == 0 or len(b) == 0:
        return []
    sim = a @ b.T
    best_b = np.argmax(sim, axis=1)
    best_a = np.argmax(sim, axis=0)
    return [(i, int(j)) for i, j in enumerate(best_b) if best_a[j] == i]


def match_prf(matches, gt) -> MatchScores:
    m = {(int(x[0]), int(x[1])) for x in matches}
    g = {(int(x[0]), int(x[1])) for x in gt if len(x) < 3 or x[2]}
    hit = len(m & g)
    p = hit / len(m) if m else 0.0
    r = hit / len(g) if g else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return MatchScores(p, r, f)


def random_match_baseline(n_a: int, n_b: int, gt) -> MatchScores:
    """Expected precision/recall when each line in A is paired with a uniform random line in B."""
    g = {(int(x[0]), int(x[1])) for x in gt if len(x) < 3 or x[2]}
    if n_a == 0 or n_b == 0:
        return MatchScores()
    expected_hits = len(g) / n_b
    p = expected_hits / n_a
    r = expected_hits / len(g) if g else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return MatchScores(p, r, f)


def evaluate(preds, gts, image_size: int = 64, eval_size: int = 128) -> EvalReport:
    rep = EvalReport()
    rep.sap = {t: structural_ap(preds, gts, t, eval_size, image_size) for t in SAP_THRESHOLDS}
    rep.ap_h, rep.f_h = heatmap_ap_f(preds, gts, eval_size, image_size=image_size)
    rep.midpoint_ap = midpoint_ap(preds, gts, 10.0, eval_size, image_size)
    return rep
