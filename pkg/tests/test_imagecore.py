import math
import struct

import numpy as np
import pytest

from d3net.imagecore import (
    Image,
    FrameSequence,
    load_image,
    save_image,
    psnr,
    ssim,
    resample,
)


def _rand_image(c, h, w, seed=0):
    rng = np.random.default_rng(seed)
    return Image(rng.random((c, h, w)))


# ---------------------------------------------------------------------------
# Image container
# ---------------------------------------------------------------------------

class TestImage:
    def test_2d_promoted_to_single_channel(self):
        img = Image(np.zeros((4, 5)))
        assert img.data.shape == (1, 4, 5)

    def test_dtype_is_float32(self):
        img = Image(np.zeros((3, 4, 5), dtype=np.float64))
        assert img.data.dtype == np.float32

    def test_rejects_bad_channel_count(self):
        with pytest.raises(ValueError):
            Image(np.zeros((2, 4, 5)))
        with pytest.raises(ValueError):
            Image(np.zeros((4, 4, 5)))

    def test_rejects_nan(self):
        arr = np.zeros((1, 4, 5))
        arr[0, 1, 2] = np.nan
        with pytest.raises(ValueError):
            Image(arr)

    def test_rejects_inf(self):
        arr = np.zeros((1, 4, 5))
        arr[0, 0, 0] = np.inf
        with pytest.raises(ValueError):
            Image(arr)

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            Image(np.zeros((1, 0, 5)))

    def test_luminance_gray_passthrough(self):
        img = _rand_image(1, 6, 7)
        assert np.allclose(img.luminance(), img.data[0])

    def test_luminance_rec601(self):
        img = _rand_image(3, 6, 7)
        want = (
            0.299 * img.data[0].astype(np.float64)
            + 0.587 * img.data[1]
            + 0.114 * img.data[2]
        )
        assert np.allclose(img.luminance(), want)


class TestFrameSequence:
    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            FrameSequence(frames=[])

    def test_rejects_mismatched_dims(self):
        with pytest.raises(ValueError):
            FrameSequence(frames=[_rand_image(1, 4, 4), _rand_image(1, 4, 5)])

    def test_len(self):
        seq = FrameSequence(frames=[_rand_image(1, 4, 4, seed=i) for i in range(3)])
        assert len(seq) == 3


# ---------------------------------------------------------------------------
# PNG round trips
# ---------------------------------------------------------------------------

class TestPng:
    def test_quantized_roundtrip_gray(self, tmp_path):
        # values already on the 8-bit lattice survive a save/load cycle exactly
        levels = np.arange(256, dtype=np.float64) / 255.0
        img = Image(np.tile(levels, (16, 1))[np.newaxis])
        p = tmp_path / "g.png"
        save_image(img, p)
        back = load_image(p)
        assert back.data.shape == img.data.shape
        assert np.array_equal(back.data, img.data.astype(np.float32))

    def test_quantized_roundtrip_rgb(self, tmp_path):
        rng = np.random.default_rng(3)
        raw = rng.integers(0, 256, size=(3, 9, 11)).astype(np.float64) / 255.0
        img = Image(raw)
        p = tmp_path / "c.png"
        save_image(img, p)
        back = load_image(p)
        assert np.allclose(back.data, img.data, atol=1e-7)

    def test_round_half_up(self, tmp_path):
        # 0.5/255 is exactly halfway between levels 0 and 1: must round up
        img = Image(np.full((1, 8, 8), 0.5 / 255.0))
        p = tmp_path / "h.png"
        save_image(img, p)
        back = load_image(p)
        assert np.all(back.data == np.float32(1.0 / 255.0))

    def test_out_of_range_clamped(self, tmp_path):
        img = Image(np.array([[[-0.5, 1.5]]]))
        p = tmp_path / "c.png"
        save_image(img, p)
        back = load_image(p)
        assert back.data[0, 0, 0] == 0.0
        assert back.data[0, 0, 1] == 1.0

    def test_load_missing_file_raises_oserror(self, tmp_path):
        with pytest.raises(OSError):
            load_image(tmp_path / "nope.png")

    def test_load_garbage_raises_oserror(self, tmp_path):
        p = tmp_path / "bad.png"
        p.write_bytes(b"this is not a png")
        with pytest.raises(OSError):
            load_image(p)


# ---------------------------------------------------------------------------
# PFM round trips
# ---------------------------------------------------------------------------

class TestPfm:
    def test_float_roundtrip_gray(self, tmp_path):
        img = _rand_image(1, 7, 5, seed=11)
        p = tmp_path / "a.pfm"
        save_image(img, p)
        back = load_image(p)
        assert np.array_equal(back.data, img.data)

    def test_float_roundtrip_rgb(self, tmp_path):
        img = _rand_image(3, 6, 9, seed=12)
        p = tmp_path / "b.pfm"
        save_image(img, p)
        back = load_image(p)
        assert np.array_equal(back.data, img.data)

    def test_values_outside_unit_range_survive(self, tmp_path):
        img = Image(np.array([[[-2.5, 7.25], [0.0, 1e6]]]))
        p = tmp_path / "r.pfm"
        save_image(img, p)
        back = load_image(p)
        assert np.array_equal(back.data, img.data)

    def test_header_layout(self, tmp_path):
        # independent byte-level decode of the written file
        img = Image(np.array([[[0.25, 0.5], [0.75, 1.0]]], dtype=np.float32))
        p = tmp_path / "h.pfm"
        save_image(img, p)
        raw = p.read_bytes()
        lines = raw.split(b"\n", 3)
        assert lines[0] == b"Pf"
        assert lines[1] == b"2 2"
        assert float(lines[2]) == -1.0
        vals = struct.unpack("<4f", lines[3])
        # bottom row first
        assert vals == (0.75, 1.0, 0.25, 0.5)

    def test_truncated_payload_raises(self, tmp_path):
        p = tmp_path / "t.pfm"
        p.write_bytes(b"Pf\n4 4\n-1.0\n" + b"\x00" * 10)
        with pytest.raises(OSError):
            load_image(p)


# ---------------------------------------------------------------------------
# PSNR
# ---------------------------------------------------------------------------

class TestPsnr:
    def test_identical_images_cap(self):
        img = _rand_image(1, 8, 8)
        assert psnr(img, img) == 99.0

    def test_matches_naive_formula(self):
        a = _rand_image(3, 16, 16, seed=1)
        b = _rand_image(3, 16, 16, seed=2)
        mse = np.mean((a.data.astype(np.float64) - b.data.astype(np.float64)) ** 2)
        want = 10.0 * math.log10(1.0 / mse)
        assert psnr(a, b) == pytest.approx(want, abs=1e-12)

    def test_known_constant_offset(self):
        # uniform error of 0.1 gives MSE 0.01 and PSNR exactly 20 dB
        a = Image(np.full((1, 8, 8), 0.4))
        b = Image(np.full((1, 8, 8), 0.5))
        assert psnr(a, b) == pytest.approx(20.0, abs=1e-6)

    def test_tiny_error_capped_at_99(self):
        a = Image(np.zeros((1, 8, 8)))
        arr = np.zeros((1, 8, 8))
        arr[0, 0, 0] = 1e-7
        b = Image(arr)
        assert psnr(a, b) == 99.0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            psnr(_rand_image(1, 8, 8), _rand_image(1, 8, 9))

    def test_symmetry(self):
        a = _rand_image(1, 12, 12, seed=5)
        b = _rand_image(1, 12, 12, seed=6)
        assert psnr(a, b) == psnr(b, a)


# ---------------------------------------------------------------------------
# SSIM
# ---------------------------------------------------------------------------

def _ssim_reference(x, y, window=11, sigma=1.5, k1=0.01, k2=0.03):
    """Direct per-window loop, no filtering shortcuts."""
    r = (window - 1) // 2
    u = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-(u * u) / (2.0 * sigma * sigma))
    kern = np.outer(g, g)
    kern /= kern.sum()
    c1, c2 = k1 * k1, k2 * k2
    h, w = x.shape
    vals = []
    for i in range(r, h - r):
        for j in range(r, w - r):
            wx = x[i - r:i + r + 1, j - r:j + r + 1]
            wy = y[i - r:i + r + 1, j - r:j + r + 1]
            mx = np.sum(kern * wx)
            my = np.sum(kern * wy)
            vx = np.sum(kern * wx * wx) - mx * mx
            vy = np.sum(kern * wy * wy) - my * my
            cxy = np.sum(kern * wx * wy) - mx * my
            num = (2 * mx * my + c1) * (2 * cxy + c2)
            den = (mx * mx + my * my + c1) * (vx + vy + c2)
            vals.append(num / den)
    return float(np.mean(vals))


class TestSsim:
    def test_identical_images(self):
        img = _rand_image(1, 16, 16)
        assert ssim(img, img) == pytest.approx(1.0, abs=1e-9)

    def test_matches_per_window_reference(self):
        a = _rand_image(1, 20, 18, seed=7)
        b = Image(
            np.clip(
                a.data + 0.1 * np.random.default_rng(8).standard_normal(a.data.shape),
                0,
                1,
            )
        )
        want = _ssim_reference(a.luminance(), b.luminance())
        assert ssim(a, b) == pytest.approx(want, abs=1e-9)

    def test_rgb_uses_luminance(self):
        a = _rand_image(3, 16, 16, seed=9)
        b = _rand_image(3, 16, 16, seed=10)
        ay = Image(a.luminance())
        by = Image(b.luminance())
        # image storage is float32, so the pre-reduced route carries one
        # extra rounding step
        assert ssim(a, b) == pytest.approx(ssim(ay, by), abs=1e-6)

    def test_rejects_small_images(self):
        with pytest.raises(ValueError):
            ssim(_rand_image(1, 10, 16), _rand_image(1, 10, 16))

    def test_range_bounded_by_one(self):
        a = _rand_image(1, 24, 24, seed=20)
        b = _rand_image(1, 24, 24, seed=21)
        assert ssim(a, b) <= 1.0


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------

class TestResample:
    def test_identity_all_kernels(self):
        img = _rand_image(1, 9, 13, seed=30)
        for k in ("nearest", "bilinear", "bicubic"):
            out = resample(img, 9, 13, kernel=k)
            assert np.allclose(out.data, img.data, atol=1e-6), k

    def test_nearest_2x_replicates(self):
        img = Image(np.array([[[1.0, 2.0], [3.0, 4.0]]]))
        out = resample(img, 4, 4, kernel="nearest")
        want = np.array(
            [
                [1, 1, 2, 2],
                [1, 1, 2, 2],
                [3, 3, 4, 4],
                [3, 3, 4, 4],
            ],
            dtype=np.float64,
        )
        assert np.array_equal(out.data[0], want)

    def test_bilinear_matches_hand_formula(self):
        # 1x2 image upscaled to 1x4 with center alignment:
        # src coords = (dst+0.5)*2/4 - 0.5 = [-0.25, 0.25, 0.75, 1.25]
        img = Image(np.array([[[0.0, 1.0]]]))
        out = resample(img, 1, 4, kernel="bilinear")
        want = np.array([0.0, 0.25, 0.75, 1.0])
        assert np.allclose(out.data[0, 0], want, atol=1e-7)

    def test_constant_image_preserved(self):
        img = Image(np.full((3, 8, 8), 0.37))
        for k in ("nearest", "bilinear", "bicubic"):
            out = resample(img, 13, 5, kernel=k)
            assert np.allclose(out.data, 0.37, atol=1e-6), k

    def test_bicubic_interpolates_linear_ramp_exactly(self):
        # cubic kernels with a=-0.5 reproduce degree-1 polynomials away
        # from the clamped border
        ramp = np.tile(np.arange(16, dtype=np.float64) / 15.0, (16, 1))
        img = Image(ramp[np.newaxis])
        out = resample(img, 16, 31, kernel="bicubic")
        xs = (np.arange(31) + 0.5) * (16 / 31) - 0.5
        want = xs / 15.0
        inner = slice(3, 28)
        assert np.allclose(out.data[0, 8, inner], want[inner], atol=1e-6)

    def test_separable_matches_2d_oracle(self):
        # brute-force bilinear in 2-D, no separability shortcut
        rng = np.random.default_rng(31)
        src = rng.random((5, 7))
        img = Image(src[np.newaxis])
        out = resample(img, 9, 4, kernel="bilinear")

        def sample(y, x):
            y0 = int(np.floor(y))
            x0 = int(np.floor(x))
            fy, fx = y - y0, x - x0
            def at(i, j):
                return src[min(max(i, 0), 4), min(max(j, 0), 6)]
            return (
                at(y0, x0) * (1 - fy) * (1 - fx)
                + at(y0, x0 + 1) * (1 - fy) * fx
                + at(y0 + 1, x0) * fy * (1 - fx)
                + at(y0 + 1, x0 + 1) * fy * fx
            )

        want = np.empty((9, 4))
        for i in range(9):
            for j in range(4):
                want[i, j] = sample((i + 0.5) * 5 / 9 - 0.5, (j + 0.5) * 7 / 4 - 0.5)
        assert np.allclose(out.data[0], want, atol=1e-6)

    def test_rejects_bad_args(self):
        img = _rand_image(1, 4, 4)
        with pytest.raises(ValueError):
            resample(img, 0, 4)
        with pytest.raises(ValueError):
            resample(img, 4, 4, kernel="lanczos")
