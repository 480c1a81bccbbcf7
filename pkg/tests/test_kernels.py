"""Numerical kernels: reference-oracle agreement and backend parity."""

import numpy as np
import pytest

import oracles
from spinepipe import kernels
from spinepipe.kernels import _fallback

try:
    from spinepipe.kernels import _native
except ImportError:  # pragma: no cover - environment without a compiler
    _native = None

IMPLS = [pytest.param(_fallback, id="fallback")]
if _native is not None:
    IMPLS.append(pytest.param(_native, id="native"))


def _resample_impl(impl, image, out_dims):
    return impl.resample3(image[None].astype(np.float64), *out_dims)[0]


class TestResample:
    def test_constant_image_reproduced(self):
        img = np.full((5, 9), 7.0)
        for dims in ((5, 9), (13, 4), (1, 1), (40, 40)):
            out = kernels.resample_bicubic(img, dims)
            np.testing.assert_allclose(out, 7.0, atol=1e-12)

    def test_identity_dims_exact(self):
        rng = np.random.default_rng(0)
        img = rng.random((17, 23))
        out = kernels.resample_bicubic(img, (17, 23))
        np.testing.assert_array_equal(out, img)

    def test_ramp_upsample_matches_reference(self):
        rr, cc = np.meshgrid(np.arange(6.0), np.arange(8.0), indexing="ij")
        img = 3.0 * rr + 0.5 * cc
        out = kernels.resample_bicubic(img, (12, 16))
        ref = oracles.resample_reference(img, (12, 16))
        np.testing.assert_allclose(out, ref, atol=1e-9)

    @pytest.mark.parametrize("impl", IMPLS)
    @pytest.mark.parametrize("dims", [(9, 14), (25, 7), (32, 32), (3, 40)])
    def test_random_images_match_reference(self, impl, dims):
        rng = np.random.default_rng(42)
        img = rng.random((11, 13))
        out = _resample_impl(impl, img, dims)
        ref = oracles.resample_reference(img, dims)
        np.testing.assert_allclose(out, ref, atol=1e-9)

    def test_one_pixel_input_replicates(self):
        # Clamped-tap weights sum to 1 only in exact arithmetic, so allow
        # rounding at the 1e-12 level rather than demanding bit equality.
        out = kernels.resample_bicubic(np.array([[4.25]]), (6, 3))
        np.testing.assert_allclose(out, np.full((6, 3), 4.25), atol=1e-12)

    def test_leading_axes_preserved(self):
        rng = np.random.default_rng(1)
        stack = rng.random((2, 3, 10, 12))
        out = kernels.resample_bicubic(stack, (5, 6))
        assert out.shape == (2, 3, 5, 6)
        np.testing.assert_array_equal(
            out[1, 2], kernels.resample_bicubic(stack[1, 2], (5, 6))
        )


class TestSamplePoints:
    @pytest.mark.parametrize("impl", IMPLS)
    def test_free_points_match_reference(self, impl):
        rng = np.random.default_rng(7)
        img = rng.random((15, 18))
        rows = rng.uniform(-4.0, 19.0, size=(6, 11))
        cols = rng.uniform(-4.0, 22.0, size=(6, 11))
        # Implementation modules take flat coordinate vectors.
        out = np.asarray(impl.sample_points(img, rows.ravel(), cols.ravel()))
        ref = oracles.sample_points_reference(img, rows, cols)
        np.testing.assert_allclose(out.reshape(rows.shape), ref, atol=1e-9)

    def test_far_outside_reads_zero(self):
        img = np.ones((8, 8))
        rows = np.array([-10.0, 30.0, 4.0])
        cols = np.array([4.0, 4.0, -50.0])
        out = kernels.sample_bicubic(img, rows, cols)
        np.testing.assert_array_equal(out, 0.0)

    def test_integer_positions_hit_samples(self):
        rng = np.random.default_rng(3)
        img = rng.random((9, 9))
        rows, cols = np.meshgrid(np.arange(9.0), np.arange(9.0), indexing="ij")
        out = kernels.sample_bicubic(img, rows, cols)
        np.testing.assert_allclose(out, img, atol=1e-12)


class TestRenderPeaks:
    @pytest.mark.parametrize("impl", IMPLS)
    def test_matches_dense_reference(self, impl):
        rng = np.random.default_rng(11)
        points = rng.uniform(5.0, 55.0, size=(6, 2))
        sigma2 = rng.uniform(0.5, 4.0, size=6)
        out = np.zeros((60, 60))
        impl.render_peaks(out, points, sigma2)
        ref = oracles.gaussian_reference((60, 60), points, sigma2)
        # The kernels truncate at six sigma, exp(-18) ~ 1.5e-8.
        np.testing.assert_allclose(out, ref, atol=1e-7)

    def test_integer_peak_is_one(self):
        out = kernels.render_peaks((20, 20), np.array([[7.0, 9.0]]), np.array([2.0]))
        assert out[7, 9] == 1.0
        assert out.max() == 1.0

    def test_rejects_bad_sigma(self):
        with pytest.raises(ValueError):
            kernels.render_peaks((4, 4), np.array([[1.0, 1.0]]), np.array([0.0]))


class TestRenderField:
    @pytest.mark.parametrize("impl", IMPLS)
    def test_matches_per_pixel_reference(self, impl):
        rng = np.random.default_rng(13)
        anchors = rng.uniform(2.0, 28.0, size=(5, 2))
        targets = rng.uniform(0.0, 30.0, size=(5, 2))
        radii = rng.uniform(2.0, 9.0, size=5)
        field = np.zeros((2, 30, 30))
        best = np.full((30, 30), np.inf)
        impl.render_field(field, best, anchors, targets, radii)
        ref = oracles.field_reference((30, 30), anchors, targets, radii)
        np.testing.assert_array_equal(field, ref)

    def test_overlap_resolves_to_nearest_anchor(self):
        anchors = np.array([[10.0, 10.0], [10.0, 16.0]])
        targets = np.array([[0.0, 0.0], [29.0, 29.0]])
        radii = np.array([5.0, 5.0])
        field = kernels.render_displacement_field((30, 30), anchors, targets, radii)
        # Pixel (10, 12) is 2 px from the first anchor and 4 from the second.
        np.testing.assert_array_equal(field[:, 10, 12], [0.0 - 10.0, 0.0 - 12.0])
        np.testing.assert_array_equal(field[:, 10, 15], [29.0 - 10.0, 29.0 - 15.0])

    def test_tie_prefers_earlier_anchor(self):
        anchors = np.array([[5.0, 4.0], [5.0, 8.0]])
        targets = np.array([[1.0, 1.0], [9.0, 9.0]])
        radii = np.array([4.0, 4.0])
        field = kernels.render_displacement_field((12, 12), anchors, targets, radii)
        # Pixel (5, 6) is exactly 2 px from both anchors.
        np.testing.assert_array_equal(field[:, 5, 6], [1.0 - 5.0, 1.0 - 6.0])

    def test_outside_all_discs_zero(self):
        field = kernels.render_displacement_field(
            (16, 16), np.array([[8.0, 8.0]]), np.array([[0.0, 0.0]]), np.array([3.0])
        )
        assert field[:, 0, 0].tolist() == [0.0, 0.0]
        assert field[:, 8, 12].tolist() == [0.0, 0.0]


@pytest.mark.skipif(_native is None, reason="native kernels not built")
class TestBackendParity:
    """Both kernel implementations must agree bit for bit."""

    def test_resample_bit_exact(self):
        rng = np.random.default_rng(21)
        img = rng.random((3, 37, 29))
        for dims in ((224, 224), (11, 53), (37, 29), (5, 5)):
            a = _fallback.resample3(img, *dims)
            b = _native.resample3(img, *dims)
            np.testing.assert_array_equal(a, b)

    def test_sample_points_bit_exact(self):
        rng = np.random.default_rng(22)
        img = rng.random((40, 31))
        rows = rng.uniform(-6.0, 46.0, size=500)
        cols = rng.uniform(-6.0, 37.0, size=500)
        np.testing.assert_array_equal(
            _fallback.sample_points(img, rows, cols),
            _native.sample_points(img, rows, cols),
        )

    def test_render_peaks_parity(self):
        # numpy's vectorised exp and libm's scalar exp can differ by one
        # ulp on identical arguments, so demand ulp-level, not bit, parity.
        rng = np.random.default_rng(23)
        points = rng.uniform(0.0, 64.0, size=(12, 2))
        sigma2 = rng.uniform(0.2, 6.0, size=12)
        a = np.zeros((64, 64))
        b = np.zeros((64, 64))
        _fallback.render_peaks(a, points, sigma2)
        _native.render_peaks(b, points, sigma2)
        np.testing.assert_array_max_ulp(a, b, maxulp=2)

    def test_render_field_bit_exact(self):
        rng = np.random.default_rng(24)
        anchors = rng.uniform(0.0, 48.0, size=(9, 2))
        targets = rng.uniform(0.0, 48.0, size=(9, 2))
        radii = rng.uniform(1.0, 10.0, size=9)
        fa = np.zeros((2, 48, 48))
        fb = np.zeros((2, 48, 48))
        ba = np.full((48, 48), np.inf)
        bb = np.full((48, 48), np.inf)
        _fallback.render_field(fa, ba, anchors, targets, radii)
        _native.render_field(fb, bb, anchors, targets, radii)
        np.testing.assert_array_equal(fa, fb)
        np.testing.assert_array_equal(ba, bb)


def test_backend_constant_reports_selection():
    assert kernels.BACKEND in ("native", "python")
