"""Single-stage line segment detection and description on synthetic scenes.

Modules: ``geom`` (segment geometry), ``autograd`` (tape-based tensors and
layers), ``targets``, ``model``, ``losses``, ``decode``, ``metrics``,
``synth`` (scene and pair generation), ``train``, ``fileio``, ``viz`` and
``cli``.
"""
from .decode import DecodeConfig, ScoredSegment, decode_segments, ncs_fuse
from .geom import CalLine, Correspondence, Homography, LineSegment, Point2, cal_to_endpoints, endpoints_to_cal
from .model import ELSD, NetworkConfig

__all__ = [
    "CalLine", "Correspondence", "DecodeConfig", "ELSD", "Homography", "LineSegment", "NetworkConfig",
    "Point2", "ScoredSegment", "cal_to_endpoints", "decode_segments", "endpoints_to_cal", "ncs_fuse",
]
__version__ = "0.1.0"
