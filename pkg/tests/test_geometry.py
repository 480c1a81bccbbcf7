"""Polygon primitives and IOU against a rasterization oracle."""

import numpy as np
import pytest

import oracles
from spinepipe import decode, geometry
from spinepipe.errors import ZeroArea

SQUARE = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


class TestAreas:
    def test_ccw_square_is_positive(self):
        assert geometry.signed_area(SQUARE) == pytest.approx(1.0)
        assert geometry.signed_area(SQUARE[::-1]) == pytest.approx(-1.0)
        assert geometry.polygon_area(SQUARE[::-1]) == pytest.approx(1.0)

    def test_triangle_area(self):
        tri = np.array([[0.0, 0.0], [4.0, 0.0], [0.0, 3.0]])
        assert geometry.polygon_area(tri) == pytest.approx(6.0)

    def test_matches_shoelace_oracle(self):
        rng = np.random.default_rng(31)
        for _ in range(20):
            quad = oracles.random_convex_quad(rng)
            assert geometry.polygon_area(quad) == pytest.approx(
                oracles.shoelace_area(quad), rel=1e-12
            )


class TestConvexHull:
    def test_drops_interior_points(self):
        pts = np.vstack([SQUARE * 4.0, [[2.0, 2.0], [1.0, 3.0]]])
        hull = geometry.convex_hull(pts)
        assert len(hull) == 4
        assert {tuple(p) for p in hull} == {tuple(p) for p in SQUARE * 4.0}

    def test_drops_collinear_boundary_points(self):
        pts = np.vstack([SQUARE * 4.0, [[0.0, 2.0], [2.0, 4.0]]])
        assert len(geometry.convex_hull(pts)) == 4

    def test_winds_counter_clockwise(self):
        rng = np.random.default_rng(32)
        for _ in range(10):
            hull = geometry.convex_hull(rng.random((12, 2)) * 20.0)
            assert geometry.signed_area(hull) > 0.0

    def test_contains_every_input_point(self):
        rng = np.random.default_rng(33)
        pts = rng.random((40, 2)) * 10.0
        hull = geometry.convex_hull(pts)
        n = len(hull)
        for p in pts:
            for i in range(n):
                a, b = hull[i], hull[(i + 1) % n]
                cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
                assert cross >= -1e-9

    def test_collinear_cloud_degenerates(self):
        pts = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
        assert len(geometry.convex_hull(pts)) <= 2


class TestClipConvex:
    def test_identical_polygons(self):
        out = geometry.clip_convex(SQUARE, SQUARE)
        assert geometry.polygon_area(out) == pytest.approx(1.0)

    def test_partial_overlap(self):
        a = SQUARE * 2.0
        b = SQUARE * 2.0 + 1.0
        out = geometry.clip_convex(a, b)
        assert geometry.polygon_area(out) == pytest.approx(1.0)

    def test_disjoint_is_empty(self):
        out = geometry.clip_convex(SQUARE, SQUARE + 5.0)
        assert out.size == 0

    def test_contained_returns_inner(self):
        outer = SQUARE * 10.0
        inner = SQUARE * 2.0 + 3.0
        out = geometry.clip_convex(inner, outer)
        assert geometry.polygon_area(out) == pytest.approx(4.0)


class TestPointAndSegments:
    def test_point_in_convex_strict(self):
        assert geometry.point_in_convex((0.5, 0.5), SQUARE)
        assert not geometry.point_in_convex((0.0, 0.5), SQUARE)  # boundary
        assert not geometry.point_in_convex((2.0, 0.5), SQUARE)

    def test_segments_cross(self):
        assert geometry.segments_cross((0, 0), (2, 2), (0, 2), (2, 0))
        assert not geometry.segments_cross((0, 0), (1, 0), (0, 1), (1, 1))
        assert geometry.segments_cross((0, 0), (3, 0), (1, 0), (2, 0))  # overlap
        assert not geometry.segments_cross((0, 0), (1, 0), (2, 0), (3, 0))


class TestPolygonIOU:
    def test_identical_is_one(self):
        assert decode.polygon_iou(SQUARE * 3.0, SQUARE * 3.0) == pytest.approx(1.0)

    def test_known_overlap(self):
        a = SQUARE * 2.0
        b = SQUARE * 2.0 + 1.0
        assert decode.polygon_iou(a, b) == pytest.approx(1.0 / 7.0)

    def test_disjoint_is_zero(self):
        assert decode.polygon_iou(SQUARE, SQUARE + 3.0) == 0.0

    def test_vertex_order_irrelevant(self):
        rng = np.random.default_rng(34)
        quad = oracles.random_convex_quad(rng)
        shuffled = quad[[2, 0, 3, 1]]
        assert decode.polygon_iou(quad, quad) == decode.polygon_iou(shuffled, quad)

    def test_degenerate_raises(self):
        line = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
        with pytest.raises(ZeroArea):
            decode.polygon_iou(line, SQUARE)
        with pytest.raises(ZeroArea):
            decode.polygon_iou(SQUARE, line)

    def test_matches_rasterization_oracle(self):
        rng = np.random.default_rng(35)
        for _ in range(50):
            a = oracles.random_convex_quad(rng)
            b = oracles.random_convex_quad(rng)
            exact = decode.polygon_iou(a, b)
            approx = oracles.rasterized_iou(a, b, n=400)
            assert abs(exact - approx) <= 4e-3
