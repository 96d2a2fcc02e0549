import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sdmnet import enhance as E
from sdmnet.rng import stream


def clahe_reference(img, clip=8.0, grid=(4, 4)):
    """Plain-loop CLAHE: clipped tile histograms, cumulative maps, bilinear blend of the four nearest tiles."""
    h, w = img.shape
    gy, gx = grid
    ph, pw = (-h) % gy, (-w) % gx
    src = np.pad(img, ((0, ph), (0, pw)), mode="reflect")
    th, tw = src.shape[0] // gy, src.shape[1] // gx
    area = th * tw
    maps = {}
    for i in range(gy):
        for j in range(gx):
            hist = [0] * 256
            for y in range(i * th, (i + 1) * th):
                for x in range(j * tw, (j + 1) * tw):
                    hist[src[y, x]] += 1
            limit = max(int(clip * area / 256), 1)
            excess = sum(max(c - limit, 0) for c in hist)
            hist = [min(c, limit) for c in hist]
            for k in range(256):
                hist[k] += excess // 256
            rem = excess % 256
            if rem:
                step = max(256 // rem, 1)
                k = 0
                while rem > 0 and k < 256:
                    hist[k] += 1
                    rem -= 1
                    k += step
            total, lut = 0, []
            for c in hist:
                total += c
                lut.append(min(255, round(total * 255 / area)))
            maps[i, j] = lut
    out = np.zeros_like(img)
    for y in range(h):
        fy = y / th - 0.5
        y0 = math.floor(fy)
        ay = fy - y0
        r0, r1 = max(y0, 0), min(y0 + 1, gy - 1)
        for x in range(w):
            fx = x / tw - 0.5
            x0 = math.floor(fx)
            ax = fx - x0
            c0, c1 = max(x0, 0), min(x0 + 1, gx - 1)
            v = img[y, x]
            val = ((maps[r0, c0][v] * (1 - ax) + maps[r0, c1][v] * ax) * (1 - ay)
                   + (maps[r1, c0][v] * (1 - ax) + maps[r1, c1][v] * ax) * ay)
            out[y, x] = min(255, max(0, round(val)))
    return out


class TestGamma:
    def test_lut_closed_form(self):
        lut = E.gamma_lut(1.0, 2.0)
        want = [math.floor(255 * (v / 255) ** 2 + 0.5) for v in range(256)]
        assert lut.tolist() == want

    def test_fixed_points(self):
        img = np.array([[0, 255]], dtype=np.uint8)
        np.testing.assert_array_equal(E.gamma_correct(img), img)

    def test_darkens_midtones(self):
        assert E.gamma_correct(np.array([[128]], dtype=np.uint8))[0, 0] == 64

    def test_sixteen_bit(self):
        img = np.array([[0, 32768, 65535]], dtype=np.uint16)
        out = E.gamma_correct(img)
        assert out.dtype == np.uint16
        assert out[0, 1] == math.floor(65535 * (32768 / 65535) ** 2 + 0.5)

    def test_bad_parameters(self):
        with pytest.raises(ValueError):
            E.gamma_correct(np.zeros((2, 2), np.uint8), gamma=0)


class TestInvert:
    @settings(max_examples=50, deadline=None)
    @given(arrays(np.uint8, (6, 5)))
    def test_involution_u8(self, img):
        np.testing.assert_array_equal(E.invert(E.invert(img)), img)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.uint16, (4, 4)))
    def test_involution_u16(self, img):
        np.testing.assert_array_equal(E.invert(E.invert(img)), img)

    def test_values(self):
        assert E.invert(np.array([[0, 10, 255]], np.uint8)).tolist() == [[255, 245, 0]]
        np.testing.assert_allclose(E.invert(np.array([0.25])), [0.75])


class TestClahe:
    def test_matches_loop_reference(self):
        rng = np.random.default_rng(3)
        for shape in [(64, 64), (37, 50)]:
            img = rng.integers(0, 256, shape).astype(np.uint8)
            diff = np.abs(E.clahe(img).astype(int) - clahe_reference(img).astype(int))
            assert diff.max() <= 1

    def test_matches_opencv(self):
        cv2 = pytest.importorskip("cv2")
        rng = np.random.default_rng(11)
        for _ in range(5):
            img = rng.integers(0, 256, (64, 64)).astype(np.uint8)
            ref = cv2.createCLAHE(clipLimit=8.0, tileGridSize=(4, 4)).apply(img)
            np.testing.assert_array_equal(E.clahe(img), ref)

    def test_huge_clip_is_plain_adaptive_equalization(self):
        img = np.random.default_rng(8).integers(0, 256, (32, 32)).astype(np.uint8)
        diff = np.abs(E.clahe(img, 1e6).astype(int) - clahe_reference(img, clip=1e6).astype(int))
        assert diff.max() <= 1

    def test_linear_ramp(self):
        img = (np.arange(256).reshape(16, 16)).astype(np.uint8)
        diff = np.abs(E.clahe(img, 8.0, (4, 4)).astype(int) - clahe_reference(img).astype(int))
        assert diff.max() <= 1

    def test_constant_image(self):
        img = np.full((16, 16), 90, np.uint8)
        out = E.clahe(img)
        assert np.unique(out).size == 1

    def test_preserves_order_within_tile_grid_of_one(self):
        img = np.tile(np.arange(64, dtype=np.uint8) * 4, (64, 1))
        out = E.clahe(img, tiles=(1, 1))
        assert np.all(np.diff(out[0].astype(int)) >= 0)

    def test_too_small(self):
        with pytest.raises(ValueError):
            E.clahe(np.zeros((2, 2), np.uint8))

    def test_float_input_keeps_depth(self):
        img = np.random.default_rng(0).random((16, 16))
        out = E.clahe(img)
        assert out.dtype == img.dtype and out.min() >= 0 and out.max() <= 1


class TestPreprocess:
    def test_clip_borders_removes_frame(self):
        img = np.zeros((40, 40), np.uint8)
        img[3:37, 2:38] = np.random.default_rng(0).integers(10, 250, (34, 36))
        out = E.clip_borders(img)
        assert out.shape == (34, 36)

    def test_clip_borders_capped(self):
        img = np.zeros((40, 40), np.uint8)
        img[18:22, 18:22] = 200
        out = E.clip_borders(img)
        assert out.shape == (20, 20)

    def test_uniform_warns(self):
        with pytest.warns(E.UniformImageWarning):
            out = E.clip_borders(np.full((10, 10), 7, np.uint8))
        assert out.shape == (10, 10)

    def test_too_small(self):
        with pytest.raises(ValueError):
            E.clip_borders(np.zeros((4, 9), np.uint8))

    def test_energy_normalize_range(self):
        vals = E.energy_normalize(np.random.default_rng(1).normal(size=(20, 20)) * 50)
        assert vals.min() >= 0 and vals.max() <= 1
        assert abs(vals.mean() - 0.5) < 0.02

    def test_energy_normalize_two_values(self):
        # mean 20, std 10 -> z = -1, +1 -> (z + 3) / 6
        img = np.array([[10, 30], [30, 10]], np.uint8)
        np.testing.assert_allclose(E.energy_normalize(img), [[1 / 3, 2 / 3], [2 / 3, 1 / 3]], rtol=1e-12)

    def test_clip_borders_five_pixel_frame(self):
        inner = np.random.default_rng(3).integers(20, 250, (30, 26)).astype(np.uint8)
        img = np.pad(inner, 5)
        out = E.clip_borders(img)
        # scan oracle: first/last rows and columns holding any nonzero pixel
        rows = np.flatnonzero(img.any(axis=1))
        cols = np.flatnonzero(img.any(axis=0))
        assert (rows[0], rows[-1], cols[0], cols[-1]) == (5, 34, 5, 30)
        np.testing.assert_array_equal(out, inner)

    def test_energy_normalize_constant(self):
        np.testing.assert_array_equal(E.energy_normalize(np.ones((3, 3))), np.full((3, 3), 0.5))

    def test_pad_square_centres(self):
        out = E.pad_square(np.ones((2, 5), np.uint8))
        assert out.shape == (5, 5)
        assert out[:, 0].tolist() == [0, 1, 1, 0, 0]

    def test_resample_bilinear_oracle(self):
        """Each output pixel is the bilinear blend at half-pixel-centred source coordinates."""
        src = np.random.default_rng(2).random((5, 7))
        out = E.resample(src, 8, 3)
        for i in range(8):
            for j in range(3):
                sy = min(max((i + 0.5) * 5 / 8 - 0.5, 0), 4)
                sx = min(max((j + 0.5) * 7 / 3 - 0.5, 0), 6)
                y0, x0 = int(math.floor(sy)), int(math.floor(sx))
                y1, x1 = min(y0 + 1, 4), min(x0 + 1, 6)
                ay, ax = sy - y0, sx - x0
                want = ((src[y0, x0] * (1 - ax) + src[y0, x1] * ax) * (1 - ay)
                        + (src[y1, x0] * (1 - ax) + src[y1, x1] * ax) * ay)
                assert out[i, j] == pytest.approx(want, abs=1e-12)

    def test_resample_identity(self):
        img = np.arange(16, dtype=np.uint8).reshape(4, 4)
        np.testing.assert_array_equal(E.resample(img, 4, 4), img)

    def test_resize_target_floor(self):
        with pytest.raises(ValueError):
            E.resize_pad(np.zeros((20, 20), np.uint8), 8)

    def test_preprocess_output(self):
        img = np.random.default_rng(4).integers(0, 256, (50, 70)).astype(np.uint8)
        out = E.preprocess(img, 32)
        assert out.shape == (32, 32) and out.dtype == np.uint8

    def test_requantize_round_half_up(self):
        assert E.from_unit(np.array([0.5 / 255, 1.5 / 255]), np.uint8).tolist() == [1, 2]


class TestVariants:
    def test_shapes(self):
        img = np.random.default_rng(5).integers(0, 256, (32, 32)).astype(np.uint8)
        for v in ("gray", "gamma", "invert"):
            assert E.make_variant(img, v).shape == (1, 32, 32)
        merged = E.make_variant(img, "chan3")
        assert merged.shape == (3, 32, 32) and merged.dtype == np.float32
        np.testing.assert_allclose(merged[0], img / 255.0, atol=1e-7)
        np.testing.assert_allclose(merged[2], E.gamma_correct(img) / 255.0, atol=1e-7)

    def test_unknown_variant(self):
        with pytest.raises(ValueError):
            E.make_variant(np.zeros((8, 8), np.uint8), "sepia")

    def test_merge_size_mismatch(self):
        with pytest.raises(ValueError):
            E.merge_3channel(np.zeros((4, 4)), np.zeros((4, 4)), np.zeros((4, 5)))


class TestAugment:
    def test_spec_validation(self):
        with pytest.raises(ValueError):
            E.AugmentSpec(rotation_degrees=20)
        with pytest.raises(ValueError):
            E.AugmentSpec(rotation_sign="left")
        with pytest.raises(ValueError):
            E.AugmentSpec(crop_fraction=0.2)

    def test_crop_window(self):
        assert E.crop_window(64, 64) == (6, 6, 51, 51)
        assert E.crop_window(100, 50) == (10, 5, 80, 40)

    def test_flip_only(self):
        img = np.arange(12, dtype=np.uint8).reshape(3, 4)
        np.testing.assert_array_equal(E.augment_image(img, E.AugmentSpec(hflip=True)), img[:, ::-1])

    def test_identity_spec(self):
        img = np.arange(16, dtype=np.uint8).reshape(4, 4)
        np.testing.assert_array_equal(E.augment_image(img, E.AugmentSpec()), img)

    def test_shape_and_dtype_kept(self):
        img = np.random.default_rng(6).random((32, 32)).astype(np.float32)
        spec = E.AugmentSpec(rotation_degrees=12.0, rotation_sign="cw", crop=True, hflip=True)
        out = E.augment_image(img, spec)
        assert out.shape == img.shape and out.dtype == img.dtype

    def test_random_spec_in_range(self):
        for i in range(50):
            spec = E.random_augment_spec(stream(0, "t", i))
            assert 0 <= spec.rotation_degrees <= 15

    def test_balance_counts(self):
        ids = [f"a{i}" for i in range(40)]
        labels = np.array([1] * 10 + [0] * 30)
        items = E.balance_training_set(ids, labels, seed=1)
        assert len(items) == 40 + 10 * 2
        extra = [sid for sid, spec in items if spec is not None]
        assert set(extra) == set(ids[:10])
        assert items == E.balance_training_set(ids, labels, seed=1)

    def test_reference_fold_ratio(self):
        # floor(2625 / 795) = 3: each nodule gets two augmented copies
        labels = np.array([1] * 795 + [0] * 2625)
        ids = [f"a{i}" for i in range(len(labels))]
        items = E.balance_training_set(ids, labels, seed=0)
        assert sum(1 for sid, _ in items if int(sid[1:]) < 795) == 2385

    def test_balanced_input_untouched(self):
        ids = ["a", "b", "c", "d"]
        items = E.balance_training_set(ids, np.array([0, 1, 0, 1]), 0)
        assert items == [(s, None) for s in ids]


@settings(max_examples=20, deadline=None)
@given(st.integers(8, 40), st.integers(8, 40), st.integers(0, 2 ** 16))
def test_clahe_output_in_range_and_shape(h, w, seed):
    img = np.random.default_rng(seed).integers(0, 256, (h, w)).astype(np.uint8)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        out = E.clahe(img)
    assert out.shape == img.shape and out.dtype == np.uint8
