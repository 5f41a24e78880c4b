"""Quality metrics vs naive loop oracles, and pixel-transform properties."""

import numpy as np
import pytest

from videocodes import metrics as M
from videocodes.augment import AugSpec


def ssim_loops(a, b):
    """Slow reference SSIM: explicit window loops, same constants."""
    win = M._gaussian_window()
    k = win.shape[0]
    h, w = a.shape
    c1, c2 = M.SSIM_K1 ** 2, M.SSIM_K2 ** 2
    vals = []
    for i in range(h - k + 1):
        for j in range(w - k + 1):
            pa = a[i:i + k, j:j + k]
            pb = b[i:i + k, j:j + k]
            mu_a = (pa * win).sum()
            mu_b = (pb * win).sum()
            va = (pa * pa * win).sum() - mu_a ** 2
            vb = (pb * pb * win).sum() - mu_b ** 2
            cov = (pa * pb * win).sum() - mu_a * mu_b
            vals.append(((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                        / ((mu_a ** 2 + mu_b ** 2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


class TestQualityMetrics:
    def test_ssim_matches_loop_oracle(self):
        rng = np.random.default_rng(0)
        a = rng.random((16, 16))
        b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
        assert np.isclose(M.ssim_frame(a, b), ssim_loops(a, b), atol=1e-12)

    def test_identical_inputs(self):
        v = np.random.default_rng(1).random((2, 16, 16, 3))
        m = M.quality_metrics(v, v)
        assert m["psnr"] == float("inf")
        assert np.isclose(m["ssim"], 1.0)
        assert m["mae"] == 0.0

    def test_psnr_known_value(self):
        a = np.zeros((1, 16, 16, 1))
        b = np.full_like(a, 0.1)  # mse = 0.01 -> psnr = 20 dB
        assert np.isclose(M.quality_metrics(a, b)["psnr"], 20.0)

    def test_mae_matches_numpy(self):
        rng = np.random.default_rng(2)
        a, b = rng.random((2, 16, 16, 3)), rng.random((2, 16, 16, 3))
        assert np.isclose(M.quality_metrics(a, b)["mae"], np.abs(a - b).mean())

    def test_shape_mismatch_raises(self):
        with pytest.raises(ValueError):
            M.quality_metrics(np.zeros((1, 16, 16, 3)), np.zeros((2, 16, 16, 3)))


class TestPixelTransforms:
    def setup_method(self):
        self.video = np.random.default_rng(3).random((4, 32, 32, 3))

    def test_flip_is_involution(self):
        spec = AugSpec("flip", (1.0,))
        twice = M.apply_pixel_transform(
            M.apply_pixel_transform(self.video, spec), spec)
        assert np.allclose(twice, self.video)

    def test_flip_zero_is_identity(self):
        out = M.apply_pixel_transform(self.video, AugSpec("flip", (0.0,)))
        assert np.array_equal(out, self.video)

    def test_full_frame_crop_is_identity(self):
        out = M.apply_pixel_transform(self.video,
                                      AugSpec("crop", (0, 0, 1, 1)))
        assert np.array_equal(out, self.video)

    def test_crop_preserves_shape(self):
        spec = AugSpec("crop", (2 / 32, 4 / 32, 30 / 32, 32 / 32))
        out = M.apply_pixel_transform(self.video, spec)
        assert out.shape == self.video.shape

    def test_brightness_endpoints(self):
        dark = M.apply_pixel_transform(self.video, AugSpec("brightness", (-1.0,)))
        assert np.allclose(dark, self.video * 0.5)
        bright = M.apply_pixel_transform(self.video, AugSpec("brightness", (1.0,)))
        assert np.allclose(bright, np.clip(self.video * 1.5, 0, 1))

    def test_rotation_zero_is_identity(self):
        out = M.apply_pixel_transform(self.video, AugSpec("rotation", (0.0,)))
        assert np.allclose(out, self.video)

    def test_rotation_preserves_center_pixel(self):
        out = M.apply_pixel_transform(self.video, AugSpec("rotation", (0.7,)))
        # rotation about the center: with odd offsets the exact center moves
        # least; just check the output stays in range and differs elsewhere
        assert out.shape == self.video.shape
        assert not np.allclose(out, self.video)

    def test_saturation_zero_factor_is_grayscale(self):
        out = M.apply_pixel_transform(self.video, AugSpec("saturation", (-1.0,)))
        assert np.allclose(out[..., 0], out[..., 1])
        assert np.allclose(out[..., 1], out[..., 2])

    def test_saturation_identity(self):
        out = M.apply_pixel_transform(self.video, AugSpec("saturation", (0.0,)))
        assert np.allclose(out, self.video)

    def test_bilinear_resize_identity(self):
        out = M.bilinear_resize(self.video, 32, 32)
        assert np.allclose(out, self.video)


class TestRawVideoFormat:
    def test_round_trip(self, tmp_path):
        v = np.random.default_rng(4).random((3, 8, 8, 3)).astype(np.float32)
        p = tmp_path / "clip.cvrv"
        M.write_raw_video(v, p)
        back = M.read_raw_video(p)
        assert np.array_equal(back.astype(np.float32), v)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "x.cvrv"
        p.write_bytes(b"NOPE" + b"\0" * 32)
        with pytest.raises(ValueError, match="magic"):
            M.read_raw_video(p)

    def test_truncated(self, tmp_path):
        v = np.zeros((2, 8, 8, 3), dtype=np.float32)
        p = tmp_path / "x.cvrv"
        M.write_raw_video(v, p)
        p.write_bytes(p.read_bytes()[:-17])
        with pytest.raises(ValueError, match="truncated"):
            M.read_raw_video(p)
