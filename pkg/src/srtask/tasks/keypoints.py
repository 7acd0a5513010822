"""Reference keypoint detector.

Multi-scale structure-tensor corner response (minimum eigenvalue), local
maxima per octave, then one greedy non-maximum suppression pass across
octaves on the base pixel grid. Deterministic: ties break by (score, then
y, x, octave) ordering.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter, maximum_filter

from ..scene_store import Raster
from .outputs import KeypointSet

N_OCTAVES = 3
NMS_RADIUS = 3.0
SIGMA_D = 1.0  # derivative smoothing
SIGMA_I = 1.5  # integration window


def to_luminance(arr):
    """Channel mean; keypoints run on a single luminance plane."""
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim == 3:
        a = a.mean(axis=2)
    return a


def corner_response(image, sigma_d=SIGMA_D, sigma_i=SIGMA_I):
    """Min-eigenvalue of the smoothed structure tensor at every pixel.

    Edges score ~0 (one dominant gradient direction); corners score > 0.
    """
    img = gaussian_filter(np.asarray(image, dtype=np.float64), sigma_d, mode="nearest")
    gy, gx = np.gradient(img)
    sxx = gaussian_filter(gx * gx, sigma_i, mode="nearest")
    syy = gaussian_filter(gy * gy, sigma_i, mode="nearest")
    sxy = gaussian_filter(gx * gy, sigma_i, mode="nearest")
    half_tr = 0.5 * (sxx + syy)
    disc = np.sqrt(np.maximum(0.25 * (sxx - syy) ** 2 + sxy ** 2, 0.0))
    return half_tr - disc  # lambda_min


def _octave_candidates(image, octave, nms_radius):
    """Positive local maxima of one octave, mapped to base-grid coordinates."""
    resp = corner_response(image)
    size = max(3, int(2 * round(nms_radius) + 1))
    is_max = (resp == maximum_filter(resp, size=size, mode="nearest")) & (resp > 0)
    ys, xs = np.nonzero(is_max)
    if ys.size == 0:
        return np.empty((0, 4))
    factor = 2.0 ** octave
    # pixel-center mapping from octave grid to base grid
    bx = (xs + 0.5) * factor - 0.5
    by = (ys + 0.5) * factor - 0.5
    return np.column_stack([bx, by, resp[ys, xs], np.full(ys.shape, octave, float)])


def _downsample2(image):
    h, w = image.shape
    h2, w2 = h // 2, w // 2
    return image[: h2 * 2, : w2 * 2].reshape(h2, 2, w2, 2).mean(axis=(1, 3))


def _greedy_nms(cands, radius):
    """Keep highest-score candidates such that no two kept points lie closer
    than `radius` (Euclidean). Grid-bucketed for near-linear time."""
    if cands.shape[0] == 0:
        return cands
    # sort by descending score, ties by (y, x, octave) for determinism
    order = np.lexsort((cands[:, 3], cands[:, 0], cands[:, 1], -cands[:, 2]))
    cands = cands[order]
    cell = max(radius, 1e-9)
    buckets = {}
    kept = []
    r2 = radius * radius
    for row in cands:
        x, y = row[0], row[1]
        cx, cy = int(x // cell), int(y // cell)
        ok = True
        for nx in range(cx - 1, cx + 2):
            for ny in range(cy - 1, cy + 2):
                for px, py in buckets.get((nx, ny), ()):
                    dx, dy = px - x, py - y
                    if dx * dx + dy * dy < r2:
                        ok = False
                        break
                if not ok:
                    break
            if not ok:
                break
        if ok:
            kept.append(row)
            buckets.setdefault((cx, cy), []).append((x, y))
    return np.array(kept)


def keypoint_detect(source, n, n_octaves=N_OCTAVES, nms_radius=NMS_RADIUS):
    """Top-n corner keypoints over `n_octaves` scales.

    Returns exactly n points when at least n positive-response maxima
    survive suppression; otherwise all of them (check len()). A constant
    image yields an empty set.
    """
    if n < 1:
        raise ValueError("requested keypoint count must be >= 1")
    arr = source.pixels if isinstance(source, Raster) else source
    lum = to_luminance(arr)
    h, w = lum.shape
    cands = []
    img = lum
    for octave in range(n_octaves):
        if min(img.shape) < 8:
            break
        cands.append(_octave_candidates(img, octave, nms_radius))
        img = _downsample2(img)
    cands = np.vstack(cands) if cands else np.empty((0, 4))
    kept = _greedy_nms(cands, nms_radius)
    if kept.shape[0] > n:
        kept = kept[:n]
    pts = np.column_stack([
        np.clip(kept[:, 0], 0, w - 1),
        np.clip(kept[:, 1], 0, h - 1),
        kept[:, 2],
    ]) if kept.size else np.empty((0, 3))
    return KeypointSet(pts, requested_count=n, image_shape=(h, w))
