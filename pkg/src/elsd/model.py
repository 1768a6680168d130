"""A small U-shaped line detector/descriptor network.

Backbone: five 3x3 convs (three of them stride 2) down to 1/8, one transposed
conv back to 1/4 with a skip connection; that 1/4 map is the shared feature.
Four detector heads (3x3 conv, optional x2 transposed conv, 1x1 conv) emit the
midpoint, centerness, geometry and fine-offset maps at 1/2 resolution. The
descriptor head (two 3x3 convs and bilinear x2 resize) produces the dense
descriptor map sampled by line pooling.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import autograd as ag
from .autograd import Grid, ParamStore
from .geom import DegenerateSegmentError, LineSegment, canonical_direction

HEADS = (("mid", 1), ("cen", 1), ("geo", 2), ("off", 2))
DESCRIPTOR_PREFIXES = ("desc.", "pool.")


@dataclass
class NetworkConfig:
    input_size: int = 64
    in_channels: int = 1
    shared_channels: int = 32
    head_channels: int = 16
    descriptor_channels: int = 16
    descriptor_dim: int = 16
    roi_width: float = 4.0
    samples_along: int = 16
    samples_across: int = 5
    pool_stride: int = 2
    upsample: bool = True

    def __post_init__(self):
        if self.input_size % 8:
            raise ValueError("input_size must be divisible by 8")
        if self.samples_along % self.pool_stride:
            raise ValueError("samples_along must be divisible by pool_stride")
        if self.samples_along < 2 or self.samples_across < 2:
            raise ValueError("line pooling needs at least 2 samples in each direction")

    @property
    def downsample(self) -> int:
        return 2 if self.upsample else 4

    @property
    def map_size(self) -> int:
        return self.input_size // self.downsample

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class DetectorMaps:
    midpoint: Grid
    centerness: Grid
    geo: Grid
    offset: Grid
    shared: Grid | None = None

    def image(self, n: int) -> dict[str, np.ndarray]:
        """Plain arrays for image ``n`` of the batch (for decoding)."""
        return {k: getattr(self, k).data[n] for k in ("midpoint", "centerness", "geo", "offset")}


def _conv(store, rng, name, cout, cin, k):
    store.add(f"{name}.w", ag.he_normal(rng, (cout, cin, k, k), cin * k * k))
    store.add(f"{name}.b", np.zeros(cout))


def _tconv(store, rng, name, cin, cout, k):
    # fan-in of a stride-2 transposed conv is cin * (k / 2)^2
    store.add(f"{name}.w", ag.he_normal(rng, (cin, cout, k, k), cin * (k // 2) ** 2))
    store.add(f"{name}.b", np.zeros(cout))


def init_params(cfg: NetworkConfig, seed: int = 0) -> ParamStore:
    rng = np.random.default_rng(seed)
    p = ParamStore()
    c = cfg.shared_channels
    c1, c2 = max(c // 4, 1), max(c // 2, 1)
    _conv(p, rng, "enc1", c1, cfg.in_channels, 3)
    _conv(p, rng, "enc2", c2, c1, 3)
    _conv(p, rng, "enc3", c, c2, 3)
    _conv(p, rng, "enc4", c, c, 3)
    _conv(p, rng, "enc5", c, c, 3)
    _tconv(p, rng, "dec", c, c, 4)
    hc = cfg.head_channels
    for name, k in HEADS:
        _conv(p, rng, f"{name}.conv", hc, c, 3)
        if cfg.upsample:
            _tconv(p, rng, f"{name}.up", hc, hc, 4)
        _conv(p, rng, f"{name}.out", k, hc, 1)
    # focal-loss style prior: start the midpoint head near 0.1
    p["mid.out.b"].data[:] = -math.log((1 - 0.1) / 0.1)
    dc = cfg.descriptor_channels
    _conv(p, rng, "desc.conv1", dc, c, 3)
    _conv(p, rng, "desc.conv2", dc, dc, 3)
    w = cfg.samples_across
    p.add("pool.dw.w", rng.normal(0.0, 1.0 / math.sqrt(w), (dc, 1, 1, w)))
    p.add("pool.dw.b", np.zeros(dc))
    flat = dc * cfg.samples_along // cfg.pool_stride
    p.add("pool.fc.w", rng.normal(0.0, 1.0 / math.sqrt(flat), (flat, cfg.descriptor_dim)))
    p.add("pool.fc.b", np.zeros(cfg.descriptor_dim))
    return p


def descriptor_param_names(params: ParamStore) -> list[str]:
    return [n for n in params if n.startswith(DESCRIPTOR_PREFIXES)]


def detector_param_names(params: ParamStore) -> list[str]:
    return [n for n in params if not n.startswith(DESCRIPTOR_PREFIXES)]


def _as_batch(image, cfg: NetworkConfig) -> Grid:
    x = ag.as_grid(image)
    if x.ndim == 2:
        x = ag.reshape(x, (1, 1) + x.shape)
    elif x.ndim == 3:
        x = ag.reshape(x, (1,) + x.shape)
    want = (cfg.in_channels, cfg.input_size, cfg.input_size)
    if x.ndim != 4 or x.shape[1:] != want:
        raise ag.ShapeError(f"image shape {x.shape} does not match config {want}")
    return x


def backbone(image, params: ParamStore, cfg: NetworkConfig) -> Grid:
    x = _as_batch(image, cfg)
    conv = lambda n, x, s: ag.relu(ag.conv2d(x, params[f"{n}.w"], params[f"{n}.b"], stride=s, pad=1))
    x = conv("enc1", x, 1)
    x = conv("enc2", x, 2)
    skip = conv("enc3", x, 2)
    x = conv("enc4", skip, 2)
    x = conv("enc5", x, 1)
    up = ag.transpose_conv2d(x, params["dec.w"], params["dec.b"], stride=2, pad=1)
    return ag.relu(up + skip)


def _head(shared, params, cfg, name):
    x = ag.relu(ag.conv2d(shared, params[f"{name}.conv.w"], params[f"{name}.conv.b"], pad=1))
    if cfg.upsample:
        x = ag.relu(ag.transpose_conv2d(x, params[f"{name}.up.w"], params[f"{name}.up.b"], stride=2, pad=1))
    return ag.conv2d(x, params[f"{name}.out.w"], params[f"{name}.out.b"])


def forward_detector(image, params: ParamStore, cfg: NetworkConfig) -> DetectorMaps:
    shared = backbone(image, params, cfg)
    mid = ag.sigmoid(_head(shared, params, cfg, "mid"))
    cen = ag.sigmoid(_head(shared, params, cfg, "cen"))
    g = _head(shared, params, cfg, "geo")
    theta = ag.sigmoid(ag.index(g, (slice(None), slice(0, 1))))
    rho = ag.softplus(ag.index(g, (slice(None), slice(1, 2))))
    off = ag.sigmoid(_head(shared, params, cfg, "off")) - 0.5
    return DetectorMaps(mid, cen, ag.concat([theta, rho], axis=1), off, shared)


def dense_descriptor_map(shared, params: ParamStore, cfg: NetworkConfig) -> Grid:
    x = ag.relu(ag.conv2d(shared, params["desc.conv1.w"], params["desc.conv1.b"], pad=1))
    x = ag.conv2d(x, params["desc.conv2.w"], params["desc.conv2.b"], pad=1)
    if cfg.upsample:
        x = ag.bilinear_upsample(x, 2)
    return x


def roi_points(segment, cfg: NetworkConfig) -> np.ndarray:
    """(H', W', 2) sample positions (x, y) in map coordinates for one segment."""
    seg = canonical_direction(LineSegment(*segment))
    p1 = np.asarray(seg.p1, dtype=float) / cfg.downsample
    p2 = np.asarray(seg.p2, dtype=float) / cfg.downsample
    d = p2 - p1
    length = math.hypot(*d)
    if length == 0.0:
        raise DegenerateSegmentError(f"zero-length segment {segment}")
    normal = np.array([-d[1], d[0]]) / length
    t = np.linspace(0.0, 1.0, cfg.samples_along)[:, None, None]
    u = (np.linspace(0.0, 1.0, cfg.samples_across) - 0.5)[None, :, None] * (cfg.roi_width / cfg.downsample)
    return p1 + t * d + u * normal


def line_pooling(desc_map, segments, params: ParamStore, cfg: NetworkConfig, batch: int | None = None) -> Grid:
    """Unit-norm descriptors (N, d) for segments given in input-image coordinates."""
    segments = list(segments)
    if not segments:
        return Grid(np.zeros((0, cfg.descriptor_dim)))
    pts = np.stack([roi_points(s, cfg) for s in segments])  # n, H', W', 2
    n, hh, ww, _ = pts.shape
    samples = ag.bilinear_sample(desc_map, pts.reshape(-1, 2), batch=batch)  # C, n*H'*W'
    c = samples.shape[0]
    feat = ag.transpose(ag.reshape(samples, (c, n, hh, ww)), (1, 0, 2, 3))
    feat = ag.depthwise_conv(feat, params["pool.dw.w"], params["pool.dw.b"])        # n, C, H', 1
    feat = ag.max_pool(feat, (cfg.pool_stride, 1), (cfg.pool_stride, 1))          # n, C, H'/S, 1
    feat = ag.reshape(feat, (n, -1))
    out = ag.fully_connected(feat, params["pool.fc.w"], params["pool.fc.b"])
    return ag.l2_normalize(out, axis=1)


class ELSD:
    """Bundles a config with its parameters."""

    def __init__(self, cfg: NetworkConfig | None = None, params: ParamStore | None = None, seed: int = 0):
        self.cfg = cfg or NetworkConfig()
        self.params = params if params is not None else init_params(self.cfg, seed)

    def detect_maps(self, image) -> DetectorMaps:
        return forward_detector(image, self.params, self.cfg)

    def descriptor_map(self, shared) -> Grid:
        return dense_descriptor_map(shared, self.params, self.cfg)

    def describe(self, desc_map, segments, batch: int | None = None) -> Grid:
        return line_pooling(desc_map, segments, self.params, self.cfg, batch)
