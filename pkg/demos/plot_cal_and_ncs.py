"""
Center-angle-length lines, dense targets, and centerness suppression
====================================================================

A segment is stored as its midpoint, its direction in [0, pi) and its
length. The detector regresses exactly those quantities on a coarse map, so
building targets from a scene and decoding them again must give the scene
back. Then two crossing lines show why the midpoint score is fused with
centerness before peaks are picked.

Run from the repository root::

    python3 demos/plot_cal_and_ncs.py

SVG overlays are written to ``demos/out/``.
"""
import math
import sys
from pathlib import Path

import numpy as np

from elsd import viz
from elsd.decode import DecodeConfig, decode_segments, ncs_fuse
from elsd.geom import LineSegment, cal_to_endpoints, endpoints_to_cal, structural_distance
from elsd.synth import SceneConfig, gen_scene
from elsd.targets import build_targets

OUT = Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)

# one segment, both ways round
seg = LineSegment.from_coords(10, 40, 50, 12)
cal = endpoints_to_cal(seg)
print(f"center ({cal.center.x:.2f}, {cal.center.y:.2f})  theta {math.degrees(cal.theta):.2f} deg  rho {cal.rho:.3f}")
print("back to endpoints:", np.round(np.asarray(cal_to_endpoints(cal)), 6).tolist())

# the endpoint order does not matter
print("swapped gives the same CAL:", endpoints_to_cal(seg.swapped()) == cal)

###############################################################################
# Targets for a synthetic scene, decoded straight back
# -----------------------------------------------------
# Maps are half the image resolution. The midpoint map carries a small bump
# around each midpoint; geometry and sub-pixel offset live at the bump's peak.

scene = gen_scene(SceneConfig(), seed=7)
t = build_targets(scene.segments, 32, 2)
decoded = decode_segments(t, DecodeConfig(downsample=2))
err = max(min(structural_distance(s, d.segment) for d in decoded) for s in scene.segments)
print(f"{len(scene.segments)} lines in the scene, {len(decoded)} decoded, worst distance {err:.2e}")
viz.write_svg(OUT / "scene_decoded.svg", viz.segments_svg(scene.image, decoded))

###############################################################################
# Two crossing lines
# ------------------
# A detector trained on real data also responds, weakly, at the midpoints of
# the halves on either side of a crossing. Those spots sit off-centre on the
# full lines, where centerness is low, so the fused score drops below the
# threshold while true midpoints keep a score near one.

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))
import xfixture  # noqa: E402

maps, true_px, frag_px = xfixture.x_intersection_maps()
fused = ncs_fuse(maps["midpoint"][0], maps["centerness"][0])
for name, px in (("true midpoints", true_px), ("fragment midpoints", frag_px)):
    print(f"{name:>18}: raw {[round(float(maps['midpoint'][0][p]), 3) for p in px]}"
          f"  fused {[round(float(fused[p]), 3) for p in px]}")

canvas = np.full((64, 64), 0.5)
for ncs in (False, True):
    out = decode_segments(maps, DecodeConfig(ncs=ncs))
    print(f"ncs={ncs}: {len(out)} detections")
    viz.write_svg(OUT / f"x_fixture_ncs_{ncs}.svg", viz.segments_svg(canvas, out))
