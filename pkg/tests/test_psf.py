import numpy as np
import pytest

from lensless3d import (CameraGeometry, MaskPattern, MaskSet, magnification,
                        mask_from_grayscale, psf_adjoint, sample_depths,
                        synthesize_psf, synthesize_stack)


def make_geom(sensor=(16, 16), mask=(5, 5), sp=40.0, mp=50.0, d=10.0):
    return CameraGeometry(mask_distance_mm=d, sensor_pitch_um=sp,
                          mask_pitch_um=mp, sensor_dims=sensor,
                          mask_dims=mask)


def brute_force_psf(mask_vals, geom, z):
    """Independent oracle: per-pixel geometric projection + bilinear lookup."""
    sr, sc = geom.sensor_dims
    mr, mc = geom.mask_dims
    shrink = 1.0 / magnification(geom, z)
    out = np.zeros((sr, sc))
    for r in range(sr):
        for c in range(sc):
            u = (c - (sc - 1) / 2) * geom.sensor_pitch_mm * shrink
            v = (r - (sr - 1) / 2) * geom.sensor_pitch_mm * shrink
            mrow = v / geom.mask_pitch_mm + (mr - 1) / 2
            mcol = u / geom.mask_pitch_mm + (mc - 1) / 2
            r0, c0 = int(np.floor(mrow)), int(np.floor(mcol))
            fr, fc = mrow - r0, mcol - c0
            acc = 0.0
            for dr, dc, w in ((0, 0, (1 - fr) * (1 - fc)),
                              (0, 1, (1 - fr) * fc),
                              (1, 0, fr * (1 - fc)),
                              (1, 1, fr * fc)):
                rr, cc = r0 + dr, c0 + dc
                if 0 <= rr < mr and 0 <= cc < mc:
                    acc += w * mask_vals[rr, cc]
            out[r, c] = acc
    return out


class TestSynthesizePsf:
    def test_matches_brute_force_projection(self):
        rng = np.random.default_rng(0)
        geom = make_geom()
        vals = rng.uniform(-1, 1, geom.mask_dims)
        for z in (15.0, 25.0, 200.0):
            got = synthesize_psf(MaskPattern(vals), geom, z)
            want = brute_force_psf(vals, geom, z)
            np.testing.assert_allclose(got, want, atol=1e-14)

    def test_single_center_feature_support_width(self):
        geom = make_geom(sensor=(33, 33), mask=(7, 7), sp=20.0, mp=50.0)
        vals = np.zeros((7, 7))
        vals[3, 3] = 1.0
        for z in (15.0, 30.0, 120.0):
            psf = synthesize_psf(MaskPattern(vals), geom, z)
            # bilinear sampling renders one feature as a tent; its width
            # at half maximum is the projected feature size
            profile = psf[16]
            cols = np.nonzero(profile >= 0.5 * profile.max())[0]
            width = cols[-1] - cols[0] + 1
            expect = magnification(geom, z) * geom.mask_pitch_mm / geom.sensor_pitch_mm
            assert abs(width - expect) <= 1.0 + 1e-9

    def test_zero_mask_gives_zero_psf(self):
        geom = make_geom()
        psf = synthesize_psf(MaskPattern(np.zeros(geom.mask_dims)), geom, 30.0)
        assert np.all(psf == 0)

    def test_unit_magnification_identity_rectangle(self):
        # z = inf with equal pitches: odd-sized grids align exactly, so
        # the PSF is the mask embedded centered in the sensor
        geom = make_geom(sensor=(11, 11), mask=(5, 5), sp=40.0, mp=40.0)
        psf = synthesize_psf(MaskPattern(np.ones((5, 5))), geom, np.inf)
        expect = np.zeros((11, 11))
        expect[3:8, 3:8] = 1.0
        np.testing.assert_allclose(psf, expect, atol=1e-12)

    def test_domain_error_below_mask(self):
        geom = make_geom(d=10.0)
        with pytest.raises(Exception):
            synthesize_psf(MaskPattern(np.zeros((5, 5))), geom, 9.0)

    def test_linearity_is_exact(self):
        rng = np.random.default_rng(1)
        geom = make_geom()
        m1 = rng.uniform(-1, 1, geom.mask_dims)
        m2 = rng.uniform(-1, 1, geom.mask_dims)
        a, b = 0.3, -0.6
        combo = a * m1 + b * m2  # stays inside [-1, 1] for these weights
        lhs = synthesize_psf(MaskPattern(combo), geom, 25.0)
        rhs = (a * synthesize_psf(MaskPattern(m1), geom, 25.0)
               + b * synthesize_psf(MaskPattern(m2), geom, 25.0))
        np.testing.assert_allclose(lhs, rhs, atol=1e-13)

    def test_shift_covariance_on_smooth_mask(self):
        # shifting the mask by one pixel shifts the PSF by
        # m(z) * mask_pitch / sensor_pitch sensor pixels; checked on a
        # smooth mask where bilinear error is small
        geom = make_geom(sensor=(64, 64), mask=(15, 15), sp=25.0, mp=50.0)
        z = 30.0
        x = np.linspace(-1, 1, 15)
        # narrow bump: negligible mass at the mask border, so a cyclic
        # shift is an honest translation
        smooth = np.exp(-(x[:, None] ** 2 + x[None, :] ** 2) / 0.15)
        shifted = np.roll(smooth, 1, axis=1)
        shifted[:, 0] = 0.0
        psf_a = synthesize_psf(MaskPattern(smooth), geom, z)
        psf_b = synthesize_psf(MaskPattern(shifted), geom, z)
        shift_px = magnification(geom, z) * geom.mask_pitch_mm / geom.sensor_pitch_mm
        # compare centroids along the shifted axis
        tot_a, tot_b = psf_a.sum(), psf_b.sum()
        ca = (psf_a.sum(axis=0) * np.arange(64)).sum() / tot_a
        cb = (psf_b.sum(axis=0) * np.arange(64)).sum() / tot_b
        assert abs((cb - ca) - shift_px) / shift_px <= 1e-2


class TestAdjoint:
    def test_inner_product_identity(self):
        rng = np.random.default_rng(7)
        geom = make_geom()
        for z in (12.0, 40.0, np.inf):
            m = rng.normal(size=geom.mask_dims)
            g = rng.normal(size=geom.sensor_dims)
            Am = synthesize_psf(MaskPattern(np.clip(m, -1, 1)), geom, z)
            ATg = psf_adjoint(g, geom, z)
            lhs = np.vdot(Am, g)
            rhs = np.vdot(np.clip(m, -1, 1), ATg)
            assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), 1.0)

    def test_unit_weight_round_trip(self):
        # alpha = 1, equal pitches, aligned odd grids: weights are 0/1,
        # so A^T(A m) restores m on the mask support
        geom = make_geom(sensor=(11, 11), mask=(5, 5), sp=40.0, mp=40.0)
        rng = np.random.default_rng(3)
        m = rng.uniform(-1, 1, (5, 5))
        g = synthesize_psf(MaskPattern(m), geom, np.inf)
        back = psf_adjoint(g, geom, np.inf)
        np.testing.assert_allclose(back, m, atol=1e-12)

    def test_zero_gradient(self):
        geom = make_geom()
        out = psf_adjoint(np.zeros(geom.sensor_dims), geom, 25.0)
        assert np.all(out == 0)


class TestStackAndTypes:
    def test_stack_matches_single_psf(self):
        geom = make_geom()
        depths = sample_depths(geom, 20.0, 20.0, 1)
        rng = np.random.default_rng(0)
        mask = MaskPattern(rng.uniform(-1, 1, geom.mask_dims))
        stack = synthesize_stack(MaskSet((mask,)), geom, depths)
        np.testing.assert_array_equal(
            stack.psfs[0, 0], synthesize_psf(mask, geom, 20.0))

    def test_paper_shaped_stack_dims(self):
        geom = CameraGeometry(10.51, 38.4, 36.0, (256, 256), (63, 63))
        depths = sample_depths(geom, 35.0, 380.0, 8)
        rng = np.random.default_rng(0)
        masks = MaskSet(tuple(
            MaskPattern(np.where(rng.random((63, 63)) < 0.5, -1.0, 1.0),
                        is_binary=True) for _ in range(8)))
        stack = synthesize_stack(masks, geom, depths)
        assert stack.psfs.shape == (8, 8, 256, 256)

    def test_identical_masks_identical_slices(self):
        geom = make_geom()
        depths = sample_depths(geom, 15.0, 60.0, 3)
        vals = np.random.default_rng(5).uniform(-1, 1, geom.mask_dims)
        masks = MaskSet((MaskPattern(vals), MaskPattern(vals.copy())))
        stack = synthesize_stack(masks, geom, depths)
        np.testing.assert_array_equal(stack.psfs[0], stack.psfs[1])

    def test_mask_value_range_enforced(self):
        with pytest.raises(ValueError):
            MaskPattern(np.full((3, 3), 1.5))
        with pytest.raises(ValueError):
            MaskPattern(np.full((3, 3), 0.5), is_binary=True)

    def test_mask_set_shape_uniformity(self):
        with pytest.raises(ValueError):
            MaskSet((MaskPattern(np.zeros((3, 3))),
                     MaskPattern(np.zeros((5, 5)))))

    def test_grayscale_import(self):
        img = np.array([[0, 255], [128, 64]], dtype=np.uint8)
        mask = mask_from_grayscale(img)
        assert mask.values[0, 0] == -1.0
        assert mask.values[0, 1] == 1.0
        binary = mask_from_grayscale(img, binary=True)
        np.testing.assert_array_equal(binary.values,
                                      [[-1.0, 1.0], [1.0, -1.0]])
        assert binary.is_binary
