"""Synthetic line scenes, random homography pairs and the on-disk dataset format.

Dataset directory layout::

    manifest.json                 format tag, version, configs, seed, sample count
    00000_a.pgm, 00000_b.pgm      16-bit binary graymaps
    00000.txt                     homography and segment records (plain text)

Images are quantised to multiples of 1/65535 at generation time, so the
16-bit graymaps store them losslessly.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .geom import (Homography, LineSegment, Point2, PointAtInfinityError, clip_segment,
                   warp_segment)

DATASET_FORMAT = "elsd-synth"
DATASET_VERSION = 1
LEVELS = 65535


class DatasetError(ValueError):
    pass


@dataclass
class SceneConfig:
    image_size: int = 64
    n_lines: tuple[int, int] = (3, 8)
    min_length: float = 8.0
    max_length: float = 40.0
    margin: float = 2.0
    background: tuple[float, float] = (0.25, 0.75)
    contrast: tuple[float, float] = (0.3, 0.6)
    line_width: float = 1.0
    texture_amplitude: float = 0.05
    noise_sigma: float = 0.02
    intersect_prob: float = 0.4
    min_midpoint_separation: float = 6.0
    max_retries: int = 200

    def __post_init__(self):
        self.n_lines = tuple(self.n_lines)
        self.background = tuple(self.background)
        self.contrast = tuple(self.contrast)
        if self.min_length < 4:
            raise ValueError("min_length must be at least 4")


@dataclass
class HomographyConfig:
    max_translation: float = 6.0
    scale: tuple[float, float] = (0.85, 1.15)
    max_rotation: float = 0.35
    max_perspective: float = 0.15
    min_visible: float = 0.5
    max_retries: int = 100

    def __post_init__(self):
        self.scale = tuple(self.scale)


@dataclass
class Scene:
    image: np.ndarray            # (H, W) in [0, 1]
    segments: list[LineSegment]
    complete: bool = True        # False if fewer lines than requested could be placed
    stroke_mask: np.ndarray | None = None

    def __iter__(self):
        return iter((self.image, self.segments))


@dataclass
class Sample:
    image_a: np.ndarray
    segments_a: list[LineSegment]
    image_b: np.ndarray
    segments_b: list[LineSegment]
    homography: Homography
    source: list[int] = field(default_factory=list)   # segments_b[k] comes from segments_a[source[k]]
    clipped: list[bool] = field(default_factory=list)


def quantize(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * LEVELS) / LEVELS


def _point_segment_distance(px, py, seg):
    (x1, y1), (x2, y2) = seg
    dx, dy = x2 - x1, y2 - y1
    t = np.clip(((px - x1) * dx + (py - y1) * dy) / (dx * dx + dy * dy), 0.0, 1.0)
    return np.hypot(px - (x1 + t * dx), py - (y1 + t * dy))


def _segment_distance(a, b) -> float:
    pa, pb = np.asarray(a), np.asarray(b)
    ds = [_point_segment_distance(p[0], p[1], b) for p in pa] + \
         [_point_segment_distance(p[0], p[1], a) for p in pb]
    return float(min(ds))


def _angle_gap(a, b) -> float:
    ta = math.atan2(a[1][1] - a[0][1], a[1][0] - a[0][0]) % math.pi
    tb = math.atan2(b[1][1] - b[0][1], b[1][0] - b[0][0]) % math.pi
    d = abs(ta - tb)
    return min(d, math.pi - d)


def _acceptable(seg: LineSegment, placed, cfg: SceneConfig) -> bool:
    lo, hi = cfg.margin, cfg.image_size - 1 - cfg.margin
    for p in seg:
        if not (lo <= p.x <= hi and lo <= p.y <= hi):
            return False
    if not cfg.min_length <= seg.length <= cfg.max_length:
        return False
    m = seg.midpoint
    for other in placed:
        om = other.midpoint
        if math.hypot(m.x - om.x, m.y - om.y) < cfg.min_midpoint_separation:
            return False
        # no near-parallel lines on top of each other
        if _angle_gap(seg, other) < 0.3 and _segment_distance(seg, other) < 3.0:
            return False
        # crossings must be clean, not grazing an endpoint
        if _segment_distance(seg, other) < 2.0 and not _crosses(seg, other, 0.15):
            return False
    return True


def _crosses(a, b, inset: float) -> bool:
    """True if a and b intersect at interior parameters in [inset, 1 - inset]."""
    (x1, y1), (x2, y2) = a
    (x3, y3), (x4, y4) = b
    den = (x2 - x1) * (y4 - y3) - (y2 - y1) * (x4 - x3)
    if abs(den) < 1e-12:
        return False
    t = ((x3 - x1) * (y4 - y3) - (y3 - y1) * (x4 - x3)) / den
    u = ((x3 - x1) * (y2 - y1) - (y3 - y1) * (x2 - x1)) / den
    return inset <= t <= 1 - inset and inset <= u <= 1 - inset


def _random_segment(rng, cfg: SceneConfig, placed) -> LineSegment:
    length = rng.uniform(cfg.min_length, cfg.max_length)
    theta = rng.uniform(0, math.pi)
    d = np.array([math.cos(theta), math.sin(theta)]) * length
    if placed and rng.random() < cfg.intersect_prob:
        # pass through an interior point of an existing line
        host = placed[rng.integers(len(placed))]
        t = rng.uniform(0.2, 0.8)
        cross = np.asarray(host.p1) + t * (np.asarray(host.p2) - np.asarray(host.p1))
        f = rng.uniform(0.2, 0.8)
        p1 = cross - f * d
    else:
        lo, hi = cfg.margin, cfg.image_size - 1 - cfg.margin
        p1 = rng.uniform(lo, hi, 2)
    p2 = p1 + d
    return LineSegment(Point2(*p1), Point2(*p2))


def _background(rng, cfg: SceneConfig) -> np.ndarray:
    n = cfg.image_size
    yy, xx = np.mgrid[0:n, 0:n] / n
    base = rng.uniform(*cfg.background)
    gx, gy = rng.uniform(-0.1, 0.1, 2)
    img = base + gx * (xx - 0.5) + gy * (yy - 0.5)
    for _ in range(3):
        fx, fy = rng.uniform(1, 4, 2)
        ph = rng.uniform(0, 2 * math.pi)
        img = img + cfg.texture_amplitude / 3 * np.sin(2 * math.pi * (fx * xx + fy * yy) + ph)
    return img


def render(segments, background: np.ndarray, intensities, width: float = 1.0):
    """Anti-aliased strokes; returns (image, stroke_mask).

    The stroke mask holds pixels at least half covered by some stroke.
    """
    img = background.copy()
    n = background.shape
    yy, xx = np.mgrid[0:n[0], 0:n[1]].astype(float)
    mask = np.zeros(n, dtype=bool)
    for seg, level in zip(segments, intensities):
        d = _point_segment_distance(xx, yy, seg)
        cov = np.clip(width / 2 + 0.5 - d, 0.0, 1.0)
        img = img * (1 - cov) + level * cov
        mask |= cov >= 0.5
    return img, mask


def gen_scene(cfg: SceneConfig | None = None, seed: int = 0) -> Scene:
    cfg = cfg or SceneConfig()
    rng = np.random.default_rng(seed)
    want = int(rng.integers(cfg.n_lines[0], cfg.n_lines[1] + 1))
    placed: list[LineSegment] = []
    tries = 0
    while len(placed) < want and tries < cfg.max_retries:
        tries += 1
        seg = _random_segment(rng, cfg, placed)
        if _acceptable(seg, placed, cfg):
            placed.append(seg)
    bg = _background(rng, cfg)
    levels = []
    for _ in placed:
        c = rng.uniform(*cfg.contrast)
        levels.append(float(np.clip(bg.mean() + (c if rng.random() < 0.5 else -c), 0.0, 1.0)))
    img, mask = render(placed, bg, levels, cfg.line_width)
    if cfg.noise_sigma > 0:
        img = img + rng.normal(0.0, cfg.noise_sigma, img.shape)
    return Scene(quantize(img), placed, len(placed) == want, mask)


def sample_homography(hcfg: HomographyConfig, size: int, rng) -> Homography:
    c = (size - 1) / 2.0
    for _ in range(hcfg.max_retries):
        tx, ty = rng.uniform(-hcfg.max_translation, hcfg.max_translation, 2) if hcfg.max_translation else (0, 0)
        s = rng.uniform(*hcfg.scale)
        a = rng.uniform(-hcfg.max_rotation, hcfg.max_rotation) if hcfg.max_rotation else 0.0
        px, py = (rng.uniform(-hcfg.max_perspective, hcfg.max_perspective, 2) / size
                  if hcfg.max_perspective else (0.0, 0.0))
        to_c = np.array([[1, 0, -c], [0, 1, -c], [0, 0, 1.0]])
        back = np.array([[1, 0, c + tx], [0, 1, c + ty], [0, 0, 1.0]])
        rot = np.array([[s * math.cos(a), -s * math.sin(a), 0], [s * math.sin(a), s * math.cos(a), 0], [0, 0, 1]])
        persp = np.array([[1, 0, 0], [0, 1, 0], [px, py, 1.0]])
        m = back @ rot @ persp @ to_c
        try:
            h = Homography(m)
        except ValueError:
            continue
        if visible_fraction(h, size) >= hcfg.min_visible:
            return h
    raise RuntimeError("could not sample a valid homography")


def visible_fraction(h: Homography, size: int) -> float:
    """Fraction of the warped image whose source lies inside the original view."""
    yy, xx = np.mgrid[0:size, 0:size]
    pts = np.c_[xx.ravel(), yy.ravel()].astype(float)
    try:
        src = h.inverse().apply(pts)
    except PointAtInfinityError:
        return 0.0
    inside = (src[:, 0] >= 0) & (src[:, 0] <= size - 1) & (src[:, 1] >= 0) & (src[:, 1] <= size - 1)
    return float(inside.mean())


def warp_image(img: np.ndarray, h: Homography) -> np.ndarray:
    """Backward-warp with bilinear interpolation; zero outside the source."""
    hh, ww = img.shape
    yy, xx = np.mgrid[0:hh, 0:ww]
    pts = np.c_[xx.ravel(), yy.ravel()].astype(float)
    src = h.inverse().apply(pts)
    x, y = src[:, 0], src[:, 1]
    inside = (x >= 0) & (x <= ww - 1) & (y >= 0) & (y <= hh - 1)
    x0 = np.clip(np.floor(x), 0, max(ww - 2, 0)).astype(int)
    y0 = np.clip(np.floor(y), 0, max(hh - 2, 0)).astype(int)
    tx = np.clip(x - x0, 0, 1)
    ty = np.clip(y - y0, 0, 1)
    x1, y1 = np.minimum(x0 + 1, ww - 1), np.minimum(y0 + 1, hh - 1)
    v = (img[y0, x0] * (1 - tx) * (1 - ty) + img[y0, x1] * tx * (1 - ty)
         + img[y1, x0] * (1 - tx) * ty + img[y1, x1] * tx * ty)
    return np.where(inside, v, 0.0).reshape(hh, ww)


def gen_pair(scene: Scene, hcfg: HomographyConfig | None = None, seed: int = 0,
             min_length: float = 8.0) -> Sample:
    hcfg = hcfg or HomographyConfig()
    rng = np.random.default_rng(seed)
    size = scene.image.shape[0]
    h = sample_homography(hcfg, size, rng)
    image_b = quantize(warp_image(scene.image, h))
    segs_b, source, clipped = [], [], []
    for i, s in enumerate(scene.segments):
        try:
            w = warp_segment(h, s)
        except PointAtInfinityError:
            continue
        c = clip_segment(w, 0.0, 0.0, size - 1.0, size - 1.0)
        if c is None or c.length < min_length:
            continue
        segs_b.append(c)
        source.append(i)
        clipped.append(c != w)
    return Sample(scene.image, list(scene.segments), image_b, segs_b, h, source, clipped)


def dihedral_homography(k: int, size: int) -> Homography:
    """One of the 8 grid symmetries: ``k % 4`` quarter turns, then a mirror if ``k >= 4``."""
    n1 = size - 1.0
    quarter = np.array([[0, -1, n1], [1, 0, 0], [0, 0, 1.0]])
    m = np.linalg.matrix_power(quarter, k % 4)
    if k >= 4:
        m = np.array([[-1, 0, n1], [0, 1, 0], [0, 0, 1.0]]) @ m
    return Homography(m)


def augment_pair(sample: Sample, hcfg: HomographyConfig | None = None, rng=None,
                 min_length: float = 8.0) -> Sample:
    """Fresh training pair from a stored one.

    View A gets a random grid symmetry, which is exact on pixels. View B is
    re-drawn from a new random homography.
    """
    rng = rng if rng is not None else np.random.default_rng()
    size = sample.image_a.shape[0]
    d = dihedral_homography(int(rng.integers(8)), size)
    scene = Scene(quantize(warp_image(sample.image_a, d)), [warp_segment(d, s) for s in sample.segments_a])
    return gen_pair(scene, hcfg, int(rng.integers(2 ** 32)), min_length)


def static_correspondences(sample: Sample) -> list[tuple[int, int]]:
    return [(i, k) for k, i in enumerate(sample.source)]


# ---------------------------------------------------------------- dataset files

def write_pgm(path, img: np.ndarray) -> None:
    q = np.round(np.clip(img, 0, 1) * LEVELS).astype(">u2")
    h, w = q.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n{LEVELS}\n".encode() + q.tobytes())


def read_pgm(path) -> np.ndarray:
    path = Path(path)
    buf = path.read_bytes()
    if not buf.startswith(b"P5"):
        raise DatasetError(f"{path}: not a binary graymap (bad magic bytes)")
    parts, pos = [], 2
    while len(parts) < 3:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            pos = buf.index(b"\n", pos) + 1
            continue
        end = pos
        while end < len(buf) and not buf[end:end + 1].isspace():
            end += 1
        if end == pos:
            raise DatasetError(f"{path}: truncated header")
        parts.append(int(buf[pos:end]))
        pos = end
    pos += 1
    w, h, maxval = parts
    dtype = ">u2" if maxval > 255 else "u1"
    need = w * h * np.dtype(dtype).itemsize
    if len(buf) - pos < need:
        raise DatasetError(f"{path}: truncated pixel data")
    return np.frombuffer(buf[pos:pos + need], dtype=dtype).reshape(h, w).astype(float) / maxval


def _fmt(v: float) -> str:
    return repr(float(v))


def _write_record(path, s: Sample) -> None:
    lines = ["H " + " ".join(_fmt(v) for v in s.homography.m.ravel())]
    for seg in s.segments_a:
        lines.append("A " + " ".join(_fmt(v) for v in (*seg.p1, *seg.p2)))
    for seg, src, cl in zip(s.segments_b, s.source, s.clipped):
        lines.append("B " + " ".join(_fmt(v) for v in (*seg.p1, *seg.p2)) + f" {src} {int(cl)}")
    Path(path).write_text("\n".join(lines) + "\n")


def _read_record(path):
    path = Path(path)
    h, a, b, src, clipped = None, [], [], [], []
    for no, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        tag, *vals = line.split()
        try:
            if tag == "H" and len(vals) == 9:
                h = Homography(np.array([float(v) for v in vals]).reshape(3, 3))
            elif tag == "A" and len(vals) == 4:
                a.append(LineSegment.from_coords(*map(float, vals)))
            elif tag == "B" and len(vals) == 6:
                b.append(LineSegment.from_coords(*map(float, vals[:4])))
                src.append(int(vals[4]))
                clipped.append(bool(int(vals[5])))
            else:
                raise ValueError
        except ValueError:
            raise DatasetError(f"{path}:{no}: malformed record") from None
    if h is None:
        raise DatasetError(f"{path}: missing homography record")
    return h, a, b, src, clipped


def write_dataset(path, samples, meta: dict | None = None) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    samples = list(samples)
    for k, s in enumerate(samples):
        write_pgm(path / f"{k:05d}_a.pgm", s.image_a)
        write_pgm(path / f"{k:05d}_b.pgm", s.image_b)
        _write_record(path / f"{k:05d}.txt", s)
    manifest = {"format": DATASET_FORMAT, "version": DATASET_VERSION, "count": len(samples)}
    manifest.update(meta or {})
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def read_dataset(path) -> list[Sample]:
    path = Path(path)
    mpath = path / "manifest.json"
    try:
        manifest = json.loads(mpath.read_text())
    except FileNotFoundError:
        raise DatasetError(f"{mpath}: missing manifest") from None
    except json.JSONDecodeError as e:
        raise DatasetError(f"{mpath}: invalid manifest ({e})") from None
    if manifest.get("format") != DATASET_FORMAT:
        raise DatasetError(f"{mpath}: not an {DATASET_FORMAT} dataset")
    if manifest.get("version") != DATASET_VERSION:
        raise DatasetError(f"{mpath}: version {manifest.get('version')} != {DATASET_VERSION}")
    out = []
    for k in range(int(manifest["count"])):
        try:
            ia = read_pgm(path / f"{k:05d}_a.pgm")
            ib = read_pgm(path / f"{k:05d}_b.pgm")
            h, a, b, src, cl = _read_record(path / f"{k:05d}.txt")
        except FileNotFoundError as e:
            raise DatasetError(f"{path}: missing file {e.filename}") from None
        out.append(Sample(ia, a, ib, b, h, src, cl))
    return out


def dataset_meta(path) -> dict:
    return json.loads((Path(path) / "manifest.json").read_text())


def generate_dataset(n: int, seed: int, cfg: SceneConfig | None = None,
                     hcfg: HomographyConfig | None = None) -> list[Sample]:
    """``n`` pairs; sample k uses seeds derived from (seed, k) only."""
    cfg = cfg or SceneConfig()
    hcfg = hcfg or HomographyConfig()
    out = []
    for k in range(n):
        ss = np.random.SeedSequence([seed, k])
        s_scene, s_pair = (int(x) for x in ss.generate_state(2))
        scene = gen_scene(cfg, s_scene)
        out.append(gen_pair(scene, hcfg, s_pair, cfg.min_length))
    return out


def config_dict(cfg) -> dict:
    return asdict(cfg)
