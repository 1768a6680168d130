"""Training loop, run configuration and run log.

One step takes a batch of homography pairs: both views go through the network
together, detector losses are computed per view, and (after the detector-only
warmup) descriptors are pooled for ground-truth ("static") lines and for lines
decoded from the current predictions ("dynamic") and trained with the triplet
loss.
"""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autograd as ag
from .checkpoint import load_checkpoint, save_checkpoint
from .decode import DecodeConfig, decode_segments
from .geom import label_correspondences, pairwise_structural_distance, segments_to_array
from .losses import (LossWeights, TrainSchedule, combine_detector, descriptor_loss,
                     detector_components, total_loss, triplet_loss)
from .model import (DetectorMaps, NetworkConfig, dense_descriptor_map,
                    detector_param_names, forward_detector, init_params, line_pooling)
from .synth import HomographyConfig, Sample, SceneConfig, augment_pair
from .targets import build_targets

log = logging.getLogger(__name__)

STATIC_TOL = 2.0        # px, endpoint tolerance for ground-truth correspondences
DYNAMIC_THETA = 10.0    # structural distance at 128-px scale, same as sAP10
EVAL_SIZE = 128


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 4
    lr: float = 1e-3
    decay_epochs: tuple = (18, 27)
    decay_factor: float = 0.1
    weight_decay: float = 1e-5
    warmup_fraction: float = 0.2
    joint_descriptor: bool = True
    augment: bool = True
    seed: int = 0
    dataset: str = ""
    checkpoint: str = ""
    score_thresh: float = 0.22
    ncs: bool = True
    loss: LossWeights = field(default_factory=LossWeights)
    net: NetworkConfig = field(default_factory=NetworkConfig)

    def __post_init__(self):
        self.decay_epochs = tuple(int(e) for e in self.decay_epochs)
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 <= self.warmup_fraction <= 1.0:
            raise ValueError("warmup_fraction must lie in [0, 1]")

    @property
    def warmup_epochs(self) -> int:
        if not self.joint_descriptor:
            return self.epochs
        return int(round(self.warmup_fraction * self.epochs))

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 0-based ``epoch``."""
        return self.lr * self.decay_factor ** sum(epoch >= e for e in self.decay_epochs)

    def decode_config(self) -> DecodeConfig:
        return DecodeConfig(score_thresh=self.score_thresh, downsample=self.net.downsample, ncs=self.ncs)

    # flat key = value text form
    def to_text(self) -> str:
        lines = []
        for k, v in _flatten(self).items():
            lines.append(f"{k} = {_fmt(v)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "TrainConfig":
        vals = {}
        for no, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{source}:{no}: expected 'key = value'")
            k, v = (p.strip() for p in line.split("=", 1))
            vals[k] = (no, v)
        return _unflatten(cls, vals, source)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        return cls.from_text(Path(path).read_text(), str(path))

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ", ".join(_fmt(x) for x in v)
    if v is None:
        return "none"
    return str(v)


def _flatten(cfg: TrainConfig) -> dict:
    out = {}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if f.name in ("loss", "net"):
            for k, x in asdict(v).items():
                out[f"{f.name}.{k}"] = x
        else:
            out[f.name] = v
    return out


def _parse(text: str, like, key: str, where: str):
    t = text.strip()
    if isinstance(like, bool):
        if t.lower() in ("true", "1", "yes"):
            return True
        if t.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"{where}: {key} expects true/false, got {t!r}")
    if isinstance(like, tuple):
        items = [x for x in (p.strip() for p in t.split(",")) if x]
        return tuple(_parse(x, like[0] if like else 0.0, key, where) for x in items)
    if like is None:
        return None if t.lower() == "none" else float(t)
    try:
        if isinstance(like, int):
            return int(t)
        if isinstance(like, float):
            return float(t)
    except ValueError:
        raise ValueError(f"{where}: {key} expects a number, got {t!r}") from None
    return t


def _unflatten(cls, vals: dict, source: str) -> TrainConfig:
    defaults = _flatten(cls())
    unknown = sorted(set(vals) - set(defaults))
    if unknown:
        no = vals[unknown[0]][0]
        raise ValueError(f"{source}:{no}: unknown key {unknown[0]!r}")
    top, loss, net = {}, {}, {}
    for k, (no, v) in vals.items():
        x = _parse(v, defaults[k], k, f"{source}:{no}")
        if k.startswith("loss."):
            loss[k[5:]] = x
        elif k.startswith("net."):
            net[k[4:]] = x
        else:
            top[k] = x
    return cls(loss=LossWeights(**loss), net=NetworkConfig(**net), **top)


@dataclass
class RunLog:
    """Append-only per-epoch records."""
    seed: int = 0
    records: list = field(default_factory=list)

    def append(self, rec: dict) -> None:
        if self.records and rec["epoch"] != self.records[-1]["epoch"] + 1:
            raise ValueError("run log epochs must be consecutive")
        self.records.append(dict(rec))

    def detector_curve(self) -> np.ndarray:
        return np.array([r["detector"] for r in self.records])

    def smoothed_final(self, window: int = 5) -> float:
        c = self.detector_curve()
        return float(c[-window:].mean())

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for r in self.records:
                f.write(json.dumps(r, sort_keys=True) + "\n")

    @classmethod
    def read(cls, path) -> "RunLog":
        recs = [json.loads(l) for l in Path(path).read_text().splitlines() if l.strip()]
        return cls(recs[0]["seed"] if recs else 0, recs)


# ---------------------------------------------------------------- step pieces

def _split(maps: DetectorMaps, lo: int, hi: int) -> DetectorMaps:
    sl = slice(lo, hi)
    return DetectorMaps(*(ag.index(getattr(maps, k), sl) for k in ("midpoint", "centerness", "geo", "offset")))


def dynamic_correspondences(pred_a, pred_b, gt_a, gt_b, static, image_size: int):
    """Pair decoded lines through their nearest ground-truth lines.

    A prediction is attached to the nearest ground-truth line of its view when
    the structural distance (at 128-px scale) is below the sAP10 threshold; each
    ground-truth line keeps only its closest prediction. Two kept predictions
    correspond when their ground-truth lines are a static match.
    Returns (segments_a, segments_b, matches).
    """
    def attach(pred, gt):
        if not pred or not gt:
            return {}
        sc = EVAL_SIZE / image_size
        d = pairwise_structural_distance(segments_to_array(pred) * sc, segments_to_array(gt) * sc)
        best = {}
        for i in range(len(pred)):
            g = int(np.argmin(d[i]))
            if d[i, g] < DYNAMIC_THETA and (g not in best or d[i, g] < d[best[g], g]):
                best[g] = i
        return best

    ka, kb = attach(pred_a, gt_a), attach(pred_b, gt_b)
    seg_a, seg_b, matches = [], [], []
    ia, ib = {}, {}
    for g in sorted(ka):
        ia[g] = len(seg_a)
        seg_a.append(pred_a[ka[g]])
    for g in sorted(kb):
        ib[g] = len(seg_b)
        seg_b.append(pred_b[kb[g]])
    for c in static:
        if c.index_a in ia and c.index_b in ib:
            matches.append((ia[c.index_a], ib[c.index_b]))
    return seg_a, seg_b, matches


def _triplets(da, db, matches, margin):
    """Both directions of the triplet loss; constant zero when there are no matches."""
    ab = triplet_loss(da, db, matches, margin)
    ba = triplet_loss(db, da, [(j, i) for i, j in matches], margin)
    return ab.loss, ba.loss, ab.n_anchors


def train_step(batch: list[Sample], targets_a, targets_b, params, cfg: TrainConfig, epoch: int):
    """Forward, loss and backward for one batch. Returns (loss Grid, stats dict)."""
    n = len(batch)
    imgs = np.stack([s.image_a for s in batch] + [s.image_b for s in batch])[:, None]
    joint = epoch >= cfg.warmup_epochs
    with ag.Tape() as tape:
        maps = forward_detector(imgs, params, cfg.net)
        ca = detector_components(_split(maps, 0, n), targets_a, cfg.loss)
        cb = detector_components(_split(maps, n, 2 * n), targets_b, cfg.loss)
        det_a = combine_detector(ca["mid"], ca["cen"], ca["geo"], ca["off"], cfg.loss)
        det_b = combine_detector(cb["mid"], cb["cen"], cb["geo"], cb["off"], cfg.loss)
        stats = {k: 0.5 * (ca[k].item() + cb[k].item()) for k in ca}
        stats["detector"] = 0.5 * (det_a.item() + det_b.item())
        if joint:
            sched = TrainSchedule(cfg.epochs, epoch + 1)
            dmap = dense_descriptor_map(maps.shared, params, cfg.net)
            dcfg = cfg.decode_config()
            terms = {"sab": [], "sba": [], "dab": [], "dba": []}
            n_static = n_dynamic = 0
            for k, s in enumerate(batch):
                static = label_correspondences(s.segments_a, s.segments_b, s.homography, STATIC_TOL)
                if static:
                    da = line_pooling(dmap, s.segments_a, params, cfg.net, batch=k)
                    db = line_pooling(dmap, s.segments_b, params, cfg.net, batch=n + k)
                    ab, ba, na = _triplets(da, db, [(c.index_a, c.index_b) for c in static], cfg.loss.margin)
                    terms["sab"].append(ab)
                    terms["sba"].append(ba)
                    n_static += na
                pa = [p.segment for p in decode_segments(maps.image(k), dcfg)]
                pb = [p.segment for p in decode_segments(maps.image(n + k), dcfg)]
                sa, sb, dm = dynamic_correspondences(pa, pb, s.segments_a, s.segments_b, static,
                                                     cfg.net.input_size)
                if dm:
                    da = line_pooling(dmap, sa, params, cfg.net, batch=k)
                    db = line_pooling(dmap, sb, params, cfg.net, batch=n + k)
                    ab, ba, na = _triplets(da, db, dm, cfg.loss.margin)
                    terms["dab"].append(ab)
                    terms["dba"].append(ba)
                    n_dynamic += na
            avg = {k: (ag.sum(ag.concat([ag.reshape(t, (1,)) for t in v])) * (1.0 / n)) if v else ag.Grid(0.0)
                   for k, v in terms.items()}
            desc = descriptor_loss(avg["sab"], avg["sba"], avg["dab"], avg["dba"], sched)
            loss = total_loss(det_a, det_b, desc, cfg.loss)
            stats.update(static=(avg["sab"].item() + avg["sba"].item()),
                         dynamic=(avg["dab"].item() + avg["dba"].item()),
                         descriptor=desc.item(), n_static=n_static, n_dynamic=n_dynamic)
        else:
            loss = total_loss(det_a, det_b, 0.0, cfg.loss)
            stats.update(static=0.0, dynamic=0.0, descriptor=0.0, n_static=0, n_dynamic=0)
        stats["total"] = loss.item()
        if not math.isfinite(stats["total"]):
            raise TrainingError(f"non-finite loss {stats['total']}")
        params.zero_grad()
        tape.backward(loss)
    return loss, stats


def make_targets(samples: list[Sample], net: NetworkConfig):
    s = net.downsample
    ta = [build_targets(x.segments_a, net.map_size, s) for x in samples]
    tb = [build_targets(x.segments_b, net.map_size, s) for x in samples]
    return ta, tb


def train(samples: list[Sample], cfg: TrainConfig, params=None, progress=None):
    """Train in place (or from a fresh initialization); returns (params, RunLog)."""
    if params is None:
        params = init_params(cfg.net, cfg.seed)
    runlog = RunLog(cfg.seed)
    if not samples and cfg.epochs > 0:
        raise TrainingError("empty training set")
    ta, tb = ([], []) if cfg.augment else make_targets(samples, cfg.net)
    hcfg, min_length = HomographyConfig(), SceneConfig().min_length
    rng = np.random.default_rng(cfg.seed)
    det_names = detector_param_names(params)
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        lr = cfg.lr_at(epoch)
        joint = epoch >= cfg.warmup_epochs
        names = None if joint else det_names
        order = rng.permutation(len(samples))
        sums: dict[str, float] = {}
        steps = 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            if cfg.augment:
                batch = [augment_pair(samples[i], hcfg, rng, min_length) for i in idx]
                bta, btb = make_targets(batch, cfg.net)
            else:
                batch, bta, btb = [samples[i] for i in idx], [ta[i] for i in idx], [tb[i] for i in idx]
            try:
                _, st = train_step(batch, bta, btb, params, cfg, epoch)
                ag.adam_step(params, lr=lr, weight_decay=cfg.weight_decay, names=names)
            except (TrainingError, FloatingPointError) as e:
                raise TrainingError(f"epoch {epoch + 1}, step {steps + 1}: {e}") from None
            for k, v in st.items():
                sums[k] = sums.get(k, 0.0) + v
            steps += 1
        rec = {k: (v / steps if not k.startswith("n_") else int(v)) for k, v in sums.items()}
        rec.update(epoch=epoch + 1, lr=lr, joint=joint, seed=cfg.seed,
                   seconds=round(time.perf_counter() - t0, 3), timestamp=time.time())
        runlog.append(rec)
        if progress:
            progress(rec)
        log.info("epoch %d/%d detector %.4f descriptor %.4f (%.1fs)", epoch + 1, cfg.epochs,
                 rec["detector"], rec["descriptor"], rec["seconds"])
    return params, runlog


def save_model(path, params, cfg: TrainConfig) -> Path:
    return save_checkpoint(path, params.state(), {"net": cfg.net.to_dict(), "train": cfg.to_text()})


def load_model(path):
    """(params, NetworkConfig) from a checkpoint directory."""
    state, conf = load_checkpoint(path)
    net = NetworkConfig.from_dict(conf.get("net", {}))
    params = init_params(net, 0)
    try:
        params.load_state(state)
    except (KeyError, ag.ShapeError) as e:
        raise ValueError(f"{path}: checkpoint does not match its network config ({e})") from None
    missing = set(params) - set(state)
    if missing:
        raise ValueError(f"{path}: checkpoint lacks parameters {sorted(missing)[:3]}")
    return params, net


# ---------------------------------------------------------------- inference helpers

def predict(images, params, net: NetworkConfig, dcfg: DecodeConfig | None = None, batch: int = 16):
    """Decoded segments per image."""
    dcfg = dcfg or DecodeConfig(downsample=net.downsample)
    out = []
    images = list(images)
    for lo in range(0, len(images), batch):
        x = np.stack(images[lo:lo + batch])[:, None]
        maps = forward_detector(x, params, net)
        out.extend(decode_segments(maps.image(k), dcfg) for k in range(len(x)))
    return out


def describe(image, segments, params, net: NetworkConfig) -> np.ndarray:
    """Unit descriptors (N, d) for ``segments`` in ``image``."""
    maps = forward_detector(np.asarray(image)[None, None], params, net)
    dmap = dense_descriptor_map(maps.shared, params, net)
    return line_pooling(dmap, segments, params, net, batch=0).data
