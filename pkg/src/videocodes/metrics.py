"""Reconstruction metrics and exact pixel-space transforms.

The pixel transforms double as training targets and verification references
for the learned latent augmentations, so they are deliberately simple and
fully deterministic.
"""

from __future__ import annotations

import struct

import numpy as np

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

# luminance weights for the saturation transform
LUMA = np.array([0.299, 0.587, 0.114])


def _gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r * r) / (2.0 * sigma * sigma))
    w = np.outer(g, g)
    return w / w.sum()


def _filter_valid(img, window):
    """2D 'valid' correlation of one channel with the window."""
    k = window.shape[0]
    view = np.lib.stride_tricks.sliding_window_view(img, (k, k))
    return np.tensordot(view, window, axes=([2, 3], [0, 1]))


def ssim_frame(a, b, window=None):
    """Mean SSIM of one (H, W) plane, Gaussian-weighted, valid borders."""
    if window is None:
        window = _gaussian_window()
    a = a.astype(np.float64)
    b = b.astype(np.float64)
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    mu_a = _filter_valid(a, window)
    mu_b = _filter_valid(b, window)
    saa = _filter_valid(a * a, window) - mu_a * mu_a
    sbb = _filter_valid(b * b, window) - mu_b * mu_b
    sab = _filter_valid(a * b, window) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (saa + sbb + c2)
    return float(np.mean(num / den))


def quality_metrics(a, b):
    """PSNR (dB, MAX=1), mean per-frame-per-channel SSIM, and MAE.

    Inputs are (F, H, W, C) videos with values in [0, 1]; identical inputs
    return ``psnr=inf, ssim=1, mae=0``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mae = float(np.mean(np.abs(a - b)))
    mse = float(np.mean((a - b) ** 2))
    psnr = float("inf") if mse == 0.0 else float(10.0 * np.log10(1.0 / mse))
    window = _gaussian_window()
    scores = [ssim_frame(a[f, :, :, c], b[f, :, :, c], window)
              for f in range(a.shape[0]) for c in range(a.shape[3])]
    return {"psnr": psnr, "ssim": float(np.mean(scores)), "mae": mae}


def psnr(a, b):
    """PSNR in dB with MAX=1; ``inf`` for identical inputs."""
    return quality_metrics(a, b)["psnr"]


def ssim(a, b):
    """Mean per-frame-per-channel SSIM of two (F, H, W, C) videos."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    window = _gaussian_window()
    scores = [ssim_frame(a[f, :, :, c], b[f, :, :, c], window)
              for f in range(a.shape[0]) for c in range(a.shape[3])]
    return float(np.mean(scores))


def mae(a, b):
    """Mean absolute error."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean(np.abs(a - b)))


# -- pixel-space transforms --------------------------------------------------


def bilinear_resize(frames, out_h, out_w):
    """Bilinear resample of (..., H, W, C) with corner-aligned sampling."""
    h, w = frames.shape[-3], frames.shape[-2]
    ys = np.linspace(0, h - 1, out_h)
    xs = np.linspace(0, w - 1, out_w)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]
    f = frames
    top = f[..., y0, :, :][..., :, x0, :] * (1 - wx) + f[..., y0, :, :][..., :, x1, :] * wx
    bot = f[..., y1, :, :][..., :, x0, :] * (1 - wx) + f[..., y1, :, :][..., :, x1, :] * wx
    return top * (1 - wy) + bot * wy


def apply_pixel_transform(video, spec):
    """Ground-truth transform for an augmentation spec; output shape == input.

    ``spec`` carries ``family`` and normalized ``params`` (see AugSpec).
    """
    video = np.asarray(video, dtype=np.float64)
    f, h, w, c = video.shape
    fam = spec.family
    if fam == "crop":
        y0, x0, y1, x1 = spec.params
        iy0, ix0 = int(round(y0 * h)), int(round(x0 * w))
        iy1, ix1 = int(round(y1 * h)), int(round(x1 * w))
        if not (0 <= iy0 < iy1 <= h and 0 <= ix0 < ix1 <= w):
            raise ValueError(f"crop box out of range: {spec.params}")
        patch = video[:, iy0:iy1, ix0:ix1, :]
        if patch.shape[1:3] == (h, w):
            return patch.copy()
        return np.clip(bilinear_resize(patch, h, w), 0.0, 1.0)
    if fam == "flip":
        return video[:, :, ::-1, :].copy() if spec.params[0] >= 0.5 else video.copy()
    if fam == "brightness":
        factor = 1.0 + 0.5 * spec.params[0]  # [-1,1] -> [0.5,1.5]
        return np.clip(video * factor, 0.0, 1.0)
    if fam == "rotation":
        angle = np.deg2rad(30.0 * spec.params[0])  # [-1,1] -> [-30deg,30deg]
        return _rotate(video, angle)
    if fam == "saturation":
        factor = 1.0 + spec.params[0]  # [-1,1] -> [0,2]
        gray = np.tensordot(video, LUMA, axes=([3], [0]))[..., None]
        return np.clip(gray + factor * (video - gray), 0.0, 1.0)
    raise ValueError(f"unknown transform family: {fam}")


def _rotate(video, angle):
    """Bilinear rotation about the frame center, zero fill outside."""
    f, h, w, c = video.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    dy, dx = yy - cy, xx - cx
    ca, sa = np.cos(angle), np.sin(angle)
    sy = cy + ca * dy - sa * dx
    sx = cx + sa * dy + ca * dx
    inside = (sy >= 0) & (sy <= h - 1) & (sx >= 0) & (sx <= w - 1)
    sy_c = np.clip(sy, 0, h - 1)
    sx_c = np.clip(sx, 0, w - 1)
    y0 = np.floor(sy_c).astype(int)
    x0 = np.floor(sx_c).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (sy_c - y0)[None, :, :, None]
    wx = (sx_c - x0)[None, :, :, None]
    out = (video[:, y0, x0, :] * (1 - wy) * (1 - wx)
           + video[:, y0, x1, :] * (1 - wy) * wx
           + video[:, y1, x0, :] * wy * (1 - wx)
           + video[:, y1, x1, :] * wy * wx)
    return out * inside[None, :, :, None]


# -- raw video interchange ("CVRV") ------------------------------------------

RAW_MAGIC = b"CVRV"
RAW_VERSION = 1


def write_raw_video(video, path):
    """Raw f32 little-endian clip file for piping between pipeline stages."""
    video = np.asarray(video, dtype="<f4")
    if video.ndim != 4:
        raise ValueError(f"expected (F,H,W,C) video, got shape {video.shape}")
    with open(path, "wb") as fh:
        fh.write(RAW_MAGIC)
        fh.write(struct.pack("<H4I", RAW_VERSION, *video.shape))
        fh.write(video.tobytes())
    return path


def read_raw_video(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != RAW_MAGIC:
            raise ValueError(f"not a raw video file (magic {magic!r})")
        version, f, h, w, c = struct.unpack("<H4I", fh.read(18))
        if version != RAW_VERSION:
            raise ValueError(f"unsupported raw video version {version}")
        raw = fh.read(f * h * w * c * 4)
    if len(raw) != f * h * w * c * 4:
        raise ValueError("truncated raw video file")
    data = np.frombuffer(raw, dtype="<f4")
    return data.reshape(f, h, w, c).astype(np.float64)
