"""Tests for synthetic PSF construction and the blur+noise pipeline."""

import numpy as np
import pytest

from msdeblur.imgmath import write_kernel_txt
from msdeblur.metrics import psnr
from msdeblur.synth import (
    gaussian_kernel,
    motion_kernel,
    parse_kernel_spec,
    synthesize,
    walk_kernel,
)


class TestMotionKernel:
    def test_length_one_is_identity(self):
        ker = motion_kernel(1, 0.0)
        np.testing.assert_array_equal(ker, [[1.0]])

    def test_horizontal_line(self):
        ker = motion_kernel(5, 0.0)
        assert ker.shape == (5, 5)
        # All mass on the center row, symmetric about the center.
        assert ker[2].sum() == pytest.approx(1.0)
        np.testing.assert_allclose(ker[[0, 1, 3, 4]], 0.0, atol=1e-15)
        np.testing.assert_allclose(ker[2], ker[2][::-1], atol=1e-12)

    def test_vertical_line(self):
        ker = motion_kernel(5, 90.0)
        assert ker[:, 2].sum() == pytest.approx(1.0)
        np.testing.assert_allclose(ker[:, [0, 1, 3, 4]], 0.0, atol=1e-12)

    @pytest.mark.parametrize("angle", [0.0, 30.0, 45.0, 90.0, 135.0])
    def test_valid_psf(self, angle):
        ker = motion_kernel(7, angle)
        assert np.all(ker >= 0.0)
        assert ker.sum() == pytest.approx(1.0)
        assert ker.shape[0] % 2 == 1 and ker.shape[1] % 2 == 1

    def test_bad_length_rejected(self):
        with pytest.raises(ValueError):
            motion_kernel(0, 0.0)


class TestGaussianKernel:
    def test_matches_closed_form(self):
        ker = gaussian_kernel(1.5, 5)
        coords = np.arange(5) - 2.0
        g = np.exp(-(coords**2) / (2 * 1.5**2))
        ref = np.outer(g, g)
        ref /= ref.sum()
        np.testing.assert_allclose(ker, ref, atol=1e-15)

    def test_symmetry_and_peak(self):
        ker = gaussian_kernel(0.8, 7)
        assert ker[3, 3] == ker.max()
        np.testing.assert_allclose(ker, ker[::-1, ::-1], atol=1e-15)

    def test_bad_args_rejected(self):
        with pytest.raises(ValueError):
            gaussian_kernel(0.0, 5)
        with pytest.raises(ValueError):
            gaussian_kernel(1.0, 4)


class TestWalkKernel:
    def test_valid_psf(self):
        ker = walk_kernel(20, seed=3)
        assert np.all(ker >= 0.0)
        assert ker.sum() == pytest.approx(1.0)
        assert ker.shape[0] % 2 == 1 and ker.shape[1] % 2 == 1

    def test_deterministic_in_seed(self):
        np.testing.assert_array_equal(walk_kernel(15, seed=7), walk_kernel(15, seed=7))
        assert walk_kernel(15, seed=7).shape != walk_kernel(15, seed=8).shape or not np.array_equal(
            walk_kernel(15, seed=7), walk_kernel(15, seed=8)
        )

    def test_zero_steps_is_point(self):
        ker = walk_kernel(0, seed=0)
        np.testing.assert_array_equal(ker, [[1.0]])


class TestParseKernelSpec:
    def test_motion_form(self):
        np.testing.assert_array_equal(parse_kernel_spec("motion:1,0"), [[1.0]])

    def test_gauss_form(self):
        np.testing.assert_allclose(
            parse_kernel_spec("gauss:1.5,5"), gaussian_kernel(1.5, 5)
        )

    def test_walk_form(self):
        np.testing.assert_array_equal(
            parse_kernel_spec("walk:10,4"), walk_kernel(10, 4)
        )

    def test_file_form(self, tmp_path):
        ker = gaussian_kernel(1.0, 3)
        path = tmp_path / "k.txt"
        write_kernel_txt(path, ker)
        np.testing.assert_array_equal(parse_kernel_spec(f"file:{path}"), ker)

    @pytest.mark.parametrize(
        "bad",
        ["motion", "motion:5", "motion:a,b", "gauss:1.5", "spline:1,2", "walk:3"],
    )
    def test_malformed_specs_rejected(self, bad):
        with pytest.raises(ValueError):
            parse_kernel_spec(bad)


class TestSynthesize:
    def test_delta_no_noise_is_identity(self):
        rng = np.random.default_rng(0)
        sharp = rng.uniform(size=(16, 16))
        out = synthesize(sharp, np.ones((1, 1)), noise_sigma=0.0)
        # Identity up to FFT round-trip noise, far below 8-bit quantization.
        np.testing.assert_allclose(out, sharp, atol=1e-13)

    def test_one_percent_noise_lands_near_40db(self):
        rng = np.random.default_rng(1)
        sharp = rng.uniform(0.3, 0.7, size=(128, 128))
        out = synthesize(sharp, np.ones((1, 1)), noise_sigma=0.01, seed=5)
        # sigma = peak/100 means MSE ~ 1e-4, i.e. 40 dB, up to sampling noise.
        assert abs(psnr(out, sharp) - 40.0) <= 0.2

    def test_output_clipped(self):
        sharp = np.ones((32, 32))
        out = synthesize(sharp, np.ones((1, 1)), noise_sigma=0.2, seed=2)
        assert out.max() <= 1.0 and out.min() >= 0.0

    def test_deterministic_in_seed(self):
        rng = np.random.default_rng(3)
        sharp = rng.uniform(size=(16, 16))
        a = synthesize(sharp, gaussian_kernel(1.0, 3), seed=9)
        b = synthesize(sharp, gaussian_kernel(1.0, 3), seed=9)
        np.testing.assert_array_equal(a, b)

    def test_rgb_supported(self):
        rng = np.random.default_rng(4)
        sharp = rng.uniform(size=(16, 16, 3))
        out = synthesize(sharp, gaussian_kernel(1.0, 3), noise_sigma=0.01, seed=1)
        assert out.shape == sharp.shape

    def test_bad_noise_rejected(self):
        with pytest.raises(ValueError):
            synthesize(np.zeros((8, 8)), np.ones((1, 1)), noise_sigma=-0.1)
