import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from elsd.geom import (CalLine, DegenerateSegmentError, Homography, LineSegment, Point2,
                       PointAtInfinityError, cal_to_endpoints, canonical_direction, centerness,
                       clip_segment, endpoints_to_cal, label_correspondences,
                       pairwise_structural_distance, structural_distance, warp_segment)

coord = st.floats(-100, 100, allow_nan=False)
segments = st.tuples(coord, coord, coord, coord).filter(
    lambda c: math.hypot(c[0] - c[2], c[1] - c[3]) > 1e-3).map(lambda c: LineSegment.from_coords(*c))


def close(a, b, tol=1e-9):
    return np.max(np.abs(np.asarray(a, float) - np.asarray(b, float))) <= tol


def test_cal_to_endpoints_examples():
    s = cal_to_endpoints(CalLine(Point2(10, 10), 0.0, 4.0))
    assert close(s, [(12, 10), (8, 10)])
    s = cal_to_endpoints(CalLine(Point2(0, 0), math.pi / 2, 2.0))
    assert close(s, [(0, 1), (0, -1)], 1e-15)


def test_endpoints_to_cal_examples():
    c = endpoints_to_cal(LineSegment.from_coords(8, 10, 12, 10))
    assert c.center == (10, 10) and c.theta == 0.0 and c.rho == 4.0
    c = endpoints_to_cal(LineSegment.from_coords(0, 0, 3, 4))
    assert math.isclose(c.rho, 5.0)
    assert 0 <= c.theta < math.pi


def test_degenerate_segment_rejected():
    with pytest.raises(DegenerateSegmentError):
        endpoints_to_cal(LineSegment.from_coords(1, 1, 1, 1))


@given(segments)
def test_cal_roundtrip_property(s):
    back = cal_to_endpoints(endpoints_to_cal(s))
    # endpoint order is not part of the representation
    assert math.sqrt(structural_distance(s, back)) <= 1e-9 * max(1.0, *map(abs, np.ravel(s)))


@given(segments)
def test_cal_swap_invariance(s):
    assert endpoints_to_cal(s) == endpoints_to_cal(s.swapped())


@given(segments)
def test_theta_range(s):
    assert 0.0 <= endpoints_to_cal(s).theta < math.pi


def test_centerness_examples():
    s = LineSegment.from_coords(0, 0, 10, 0)
    assert centerness((5, 0), s) == 1.0
    assert math.isclose(centerness((2.5, 0), s), math.sqrt(2.5 / 7.5))
    assert centerness((0, 0), s) == 0.0


@given(segments, st.floats(0, 1))
def test_centerness_symmetric_and_bounded(s, t):
    p = (s.p1.x + t * (s.p2.x - s.p1.x), s.p1.y + t * (s.p2.y - s.p1.y))
    q = (s.p1.x + (1 - t) * (s.p2.x - s.p1.x), s.p1.y + (1 - t) * (s.p2.y - s.p1.y))
    c = centerness(p, s)
    assert 0.0 <= c <= 1.0
    assert math.isclose(c, centerness(q, s), abs_tol=1e-6)


def test_homography_validation():
    with pytest.raises(ValueError):
        Homography(np.zeros((3, 3)))
    with pytest.raises(ValueError):
        Homography(np.eye(2))
    h = Homography(2 * np.eye(3))
    assert h.m[2, 2] == 1.0


def test_warp_identity_and_translation():
    s = LineSegment.from_coords(1.5, 2.0, 7.0, 9.25)
    assert warp_segment(Homography.identity(), s) == s
    t = warp_segment(Homography.translation(3, -1), s)
    assert close(t, [(4.5, 1.0), (10.0, 8.25)], 0)


def test_warp_to_infinity_raises():
    h = Homography([[1, 0, 0], [0, 1, 0], [1, 0, 1]])
    with pytest.raises(PointAtInfinityError):
        warp_segment(h, LineSegment.from_coords(-1, 0, 2, 2))


def test_homography_inverse_composition():
    rng = np.random.default_rng(0)
    m = np.eye(3) + rng.normal(0, 0.05, (3, 3))
    h = Homography(m)
    pts = rng.uniform(0, 50, (10, 2))
    assert close((h.inverse() @ h).apply(pts), pts, 1e-9)


def test_structural_distance_examples():
    a = LineSegment.from_coords(0, 0, 10, 0)
    assert structural_distance(a, a.swapped()) == 0.0
    b = LineSegment.from_coords(0, 1, 10, 1)
    assert structural_distance(a, b) == 2.0


@given(segments, segments)
def test_structural_distance_symmetric(a, b):
    assert structural_distance(a, b) == structural_distance(b, a)
    assert structural_distance(a, b) == structural_distance(a, b.swapped())


@given(st.lists(segments, min_size=1, max_size=5), st.lists(segments, min_size=1, max_size=5))
@settings(max_examples=50)
def test_pairwise_matches_scalar(a, b):
    d = pairwise_structural_distance(a, b)
    ref = np.array([[structural_distance(x, y) for y in b] for x in a])
    assert np.allclose(d, ref, rtol=1e-12, atol=1e-9)


def test_label_correspondences_identity():
    segs = [LineSegment.from_coords(0, 0, 10, 0), LineSegment.from_coords(5, 5, 5, 20)]
    out = label_correspondences(segs, list(reversed(segs)), Homography.identity(), 2.0)
    assert [(c.index_a, c.index_b) for c in out] == [(0, 1), (1, 0)]
    assert all(c.is_match for c in out)


def test_label_correspondences_tolerance_and_one_to_one():
    a = [LineSegment.from_coords(0, 0, 10, 0)]
    b = [LineSegment.from_coords(0, 1.5, 10, 1.5), LineSegment.from_coords(0, 0.5, 10, 0.5)]
    out = label_correspondences(a, b, Homography.identity(), 2.0)
    assert [(c.index_a, c.index_b) for c in out] == [(0, 1)]
    assert label_correspondences(a, b, Homography.identity(), 0.4) == []
    with pytest.raises(ValueError):
        label_correspondences(a, b, Homography.identity(), 0.0)


def test_clip_segment():
    s = LineSegment.from_coords(-5, 5, 15, 5)
    assert clip_segment(s, 0, 0, 10, 10) == LineSegment.from_coords(0, 5, 10, 5)
    assert clip_segment(LineSegment.from_coords(-5, -5, -1, -1), 0, 0, 10, 10) is None


def test_canonical_direction():
    s = canonical_direction(LineSegment.from_coords(3, 9, 1, 2))
    assert s.p1 == (1, 2)
