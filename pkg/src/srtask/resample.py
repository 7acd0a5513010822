"""Deterministic resampling kernels.

Bicubic upsampling (cubic convolution, a=-0.5, pixel-center alignment,
replicate borders), antialiased area downsampling for GSD matching, binary
mask rescaling, and a synthetic LR degradation pipeline. Everything here is
pure and reentrant; outputs depend only on the arguments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import DataError

DEFAULT_KERNEL_A = -0.5


@dataclass(frozen=True)
class ResampleSpec:
    """Resolved resampling request: method, target dims, kernel parameter."""

    method: str  # bicubic | area | nearest
    target_width: int
    target_height: int
    a: float = DEFAULT_KERNEL_A
    border: str = "replicate"

    def __post_init__(self):
        if self.method not in ("bicubic", "area", "nearest"):
            raise ValueError(f"unknown resample method {self.method!r}")
        if self.target_width < 1 or self.target_height < 1:
            raise DataError("target dimensions must be >= 1")
        if self.border != "replicate":
            raise ValueError(f"unsupported border policy {self.border!r}")


def cubic_kernel(x, a=DEFAULT_KERNEL_A):
    """Cubic convolution weight at offset x (vectorized).

    W(0)=1, W(+-1)=W(+-2)=0; weights for any fractional offset sum to 1.
    """
    x = np.abs(np.asarray(x, dtype=np.float64))
    out = np.zeros_like(x)
    near = x <= 1.0
    far = (x > 1.0) & (x < 2.0)
    out[near] = (a + 2.0) * x[near] ** 3 - (a + 3.0) * x[near] ** 2 + 1.0
    out[far] = a * (x[far] ** 3 - 5.0 * x[far] ** 2 + 8.0 * x[far] - 4.0)
    return out


def bicubic_weights(t, a=DEFAULT_KERNEL_A):
    """The 4 tap weights for a sample at fractional offset t in [0, 1).

    Taps sit at integer positions -1, 0, 1, 2 relative to floor(src).
    """
    return cubic_kernel(np.array([1.0 + t, t, 1.0 - t, 2.0 - t]), a=a)


def _bicubic_axis_matrix(n_in, n_out, a):
    """Dense (n_out, n_in) interpolation matrix for one axis.

    Pixel-center mapping: src = (dst + 0.5) * n_in/n_out - 0.5. Out-of-range
    taps are clamped to the border sample (replicate), which folds their
    weight onto the edge entries.
    """
    w = np.zeros((n_out, n_in), dtype=np.float64)
    scale = n_in / n_out
    dst = np.arange(n_out, dtype=np.float64)
    src = (dst + 0.5) * scale - 0.5
    base = np.floor(src).astype(np.int64)
    t = src - base
    offs = np.array([-1, 0, 1, 2])
    dists = np.abs(t[:, None] - offs[None, :])
    wts = cubic_kernel(dists, a=a)
    idx = np.clip(base[:, None] + offs[None, :], 0, n_in - 1)
    rows = np.repeat(np.arange(n_out), 4)
    np.add.at(w, (rows, idx.ravel()), wts.ravel())
    return w


def _area_axis_matrix(n_in, n_out):
    """Dense (n_out, n_in) box-overlap averaging matrix for one axis.

    Output cell j covers the source interval [j*s, (j+1)*s), s = n_in/n_out;
    weights are overlap lengths divided by s, so rows sum to 1 exactly for
    integer factors and to 1 within float rounding otherwise.
    """
    w = np.zeros((n_out, n_in), dtype=np.float64)
    s = n_in / n_out
    for j in range(n_out):
        lo = j * s
        hi = (j + 1) * s
        i0 = int(np.floor(lo))
        i1 = min(int(np.ceil(hi)), n_in)
        for i in range(i0, i1):
            ov = min(hi, i + 1) - max(lo, i)
            if ov > 0:
                w[j, i] = ov / s
    return w


def _apply_separable(pixels, wr, wc):
    """Apply per-axis matrices to an (H, W, C) array: out = wr @ img @ wc.T."""
    x = pixels.astype(np.float64, copy=False)
    out = np.einsum("ij,jkc->ikc", wr, x)
    out = np.einsum("kl,ilc->ikc", wc, out)
    return out


def bicubic_resize_array(pixels, target_hw, a=DEFAULT_KERNEL_A, clamp_range=True):
    """Bicubic resize of an (H, W, C) or (H, W) array to (th, tw).

    Values are clamped per channel to the input channel's [min, max] range.
    """
    th, tw = target_hw
    if th < 1 or tw < 1:
        raise DataError("target dimensions must be >= 1")
    squeeze = pixels.ndim == 2
    x = pixels[:, :, None] if squeeze else pixels
    h, w = x.shape[:2]
    out = _apply_separable(x, _bicubic_axis_matrix(h, th, a), _bicubic_axis_matrix(w, tw, a))
    if clamp_range:
        lo = x.reshape(-1, x.shape[2]).min(axis=0)
        hi = x.reshape(-1, x.shape[2]).max(axis=0)
        out = np.clip(out, lo[None, None, :], hi[None, None, :])
    return out[:, :, 0] if squeeze else out


def area_resize_array(pixels, target_hw):
    """Box/area-averaging resize of an (H, W, C) or (H, W) array to (th, tw)."""
    th, tw = target_hw
    if th < 1 or tw < 1:
        raise DataError("target dimensions must be >= 1")
    squeeze = pixels.ndim == 2
    x = pixels[:, :, None] if squeeze else pixels
    h, w = x.shape[:2]
    out = _apply_separable(x, _area_axis_matrix(h, th), _area_axis_matrix(w, tw))
    return out[:, :, 0] if squeeze else out


def bicubic_resize(raster, target_hw, a=DEFAULT_KERNEL_A):
    """Bicubic resize of a Raster; output gsd scales with the width ratio."""
    th, tw = target_hw
    out = bicubic_resize_array(raster.pixels, (th, tw), a=a)
    gsd = raster.gsd * raster.width / tw
    return raster.with_pixels(out.astype(raster.pixels.dtype), gsd=gsd)


def downscale_to_gsd(raster, target_gsd):
    """Antialiased (area-averaging) downsample to the requested coarser gsd.

    Output dims are round(dims * gsd/target_gsd); the output gsd is recomputed
    from the actual integer width so repeated calls stay consistent.
    """
    if target_gsd <= raster.gsd:
        if target_gsd == raster.gsd:
            return raster
        raise DataError(f"target gsd {target_gsd} must exceed source gsd {raster.gsd}")
    factor = raster.gsd / target_gsd
    tw = int(round(raster.width * factor))
    th = int(round(raster.height * factor))
    if tw < 4 or th < 4:
        raise DataError(f"downscaled dims {th}x{tw} fall below the 4 px minimum")
    out = area_resize_array(raster.pixels, (th, tw))
    gsd = raster.gsd * raster.width / tw
    return raster.with_pixels(out.astype(raster.pixels.dtype), gsd=gsd)


def resize_mask(mask, target_hw):
    """Rescale a {0,1} mask: area-average then binarize at 0.5, ties -> 1."""
    m = np.asarray(mask)
    vals = np.unique(m)
    if not np.all(np.isin(vals, (0, 1))):
        raise DataError("mask values must be in {0, 1}")
    avg = area_resize_array(m.astype(np.float64), target_hw)
    return (avg >= 0.5).astype(np.uint8)


def degrade_simulate(hr_raster, scale, blur_sigma=1.0, noise_sigma=0.01, seed=0):
    """Simulate an LR observation: Gaussian blur, area decimation xS, noise.

    Deterministic given the seed; output clamped to [0, 1] and gsd scaled by S.
    """
    if scale < 2:
        raise DataError("degradation scale must be >= 2")
    if hr_raster.height % scale or hr_raster.width % scale:
        raise DataError("HR dims must be divisible by the decimation factor")
    x = hr_raster.pixels.astype(np.float64)
    if blur_sigma > 0:
        x = gaussian_filter(x, sigma=(blur_sigma, blur_sigma, 0), mode="nearest")
    th, tw = hr_raster.height // scale, hr_raster.width // scale
    x = x.reshape(th, scale, tw, scale, x.shape[2]).mean(axis=(1, 3))
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        x = x + rng.normal(0.0, noise_sigma, size=x.shape)
    x = np.clip(x, 0.0, 1.0)
    return hr_raster.with_pixels(x.astype(np.float32), gsd=hr_raster.gsd * scale)
