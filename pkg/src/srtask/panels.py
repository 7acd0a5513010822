"""Deterministic comparison panels (PNG grids mirroring the figure layout:
columns are branches, rows are input / task output / overlay)."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .errors import DataError
from .evaluate import Branch
from .resample import bicubic_resize
from .scene_store import compose_rgb, normalize_radiometry
from .tasks.outputs import KeypointSet, Partition, SegMask

HEADER_H = 14
ROW_LABELS = ("input", "task output", "overlay")
BRANCH_ORDER = (Branch.LR, Branch.BICUBIC, Branch.HR)

MASK_COLOR = np.array([255, 64, 64], dtype=np.float64)
KEYPOINT_COLOR = (64, 255, 64)


def _display_rgb(raster, size):
    """uint8 RGB view of a raster, nearest-upscaled to `size` (h, w)."""
    try:
        rgb = compose_rgb(raster).pixels
    except Exception:
        px = normalize_radiometry(raster).pixels
        rgb = np.repeat(px[:, :, :1], 3, axis=2) if px.shape[2] != 3 else px
    h, w = size
    ry = np.clip((np.arange(h) * rgb.shape[0] // h), 0, rgb.shape[0] - 1)
    rx = np.clip((np.arange(w) * rgb.shape[1] // w), 0, rgb.shape[1] - 1)
    up = rgb[ry][:, rx]
    return np.round(up * 255.0).astype(np.uint8)


def _palette(n):
    """Fixed label palette: evenly rotating hues, deterministic."""
    idx = np.arange(max(n, 1))
    hue = (idx * 0.61803398875) % 1.0
    h6 = hue * 6.0
    c = np.ones_like(hue)
    x = 1.0 - np.abs(h6 % 2 - 1.0)
    rgb = np.zeros((len(idx), 3))
    sector = h6.astype(int) % 6
    lut = [(c, x, 0), (x, c, 0), (0, c, x), (0, x, c), (x, 0, c), (c, 0, x)]
    for s, (r, g, b) in enumerate(lut):
        m = sector == s
        rgb[m, 0] = r[m] if isinstance(r, np.ndarray) else r
        rgb[m, 1] = g[m] if isinstance(g, np.ndarray) else g
        rgb[m, 2] = b[m] if isinstance(b, np.ndarray) else b
    return np.round(64 + rgb * 191).astype(np.uint8)


def _output_rgb(output, size):
    h, w = size
    if isinstance(output, SegMask):
        g = np.round(output.prob * 255.0).astype(np.uint8)
        img = np.stack([g, g, g], axis=2)
    elif isinstance(output, Partition):
        pal = _palette(output.n_segments)
        img = pal[output.labels]
    elif isinstance(output, KeypointSet):
        img = np.zeros((output.image_shape[0], output.image_shape[1], 3), np.uint8)
        img = _draw_keypoints(img, output)
    else:
        raise DataError(f"cannot render output of type {type(output).__name__}")
    if img.shape[:2] != size:
        ry = np.clip((np.arange(h) * img.shape[0] // h), 0, img.shape[0] - 1)
        rx = np.clip((np.arange(w) * img.shape[1] // w), 0, img.shape[1] - 1)
        img = img[ry][:, rx]
    return img


def _draw_keypoints(rgb, kps):
    im = Image.fromarray(rgb)
    draw = ImageDraw.Draw(im)
    for x, y, _ in kps.points:
        draw.ellipse([x - 3, y - 3, x + 3, y + 3], outline=KEYPOINT_COLOR)
    return np.asarray(im)


def _overlay(base, output):
    out = base.astype(np.float64)
    if isinstance(output, SegMask):
        m = output.binary
        if m.shape != base.shape[:2]:
            m = _nearest_bool(m, base.shape[:2])
        out[m] = 0.5 * out[m] + 0.5 * MASK_COLOR
    elif isinstance(output, Partition):
        pal = _palette(output.n_segments)
        colors = pal[output.labels]
        if colors.shape[:2] != base.shape[:2]:
            ry = np.clip(np.arange(base.shape[0]) * colors.shape[0] // base.shape[0],
                         0, colors.shape[0] - 1)
            rx = np.clip(np.arange(base.shape[1]) * colors.shape[1] // base.shape[1],
                         0, colors.shape[1] - 1)
            colors = colors[ry][:, rx]
        out = 0.5 * out + 0.5 * colors
    elif isinstance(output, KeypointSet):
        scale = base.shape[0] / output.image_shape[0]
        scaled = output.scaled(scale, base.shape[:2]) if scale != 1 else output
        return _draw_keypoints(np.round(out).astype(np.uint8), scaled)
    return np.round(out).astype(np.uint8)


def _nearest_bool(mask, size):
    ry = np.clip(np.arange(size[0]) * mask.shape[0] // size[0], 0, mask.shape[0] - 1)
    rx = np.clip(np.arange(size[1]) * mask.shape[1] // size[1], 0, mask.shape[1] - 1)
    return mask[ry][:, rx]


def render_panel(scene, branch_results, out_path, annotations=None):
    """Write the comparison grid for one scene; byte-identical on reruns."""
    if len(branch_results) < 2:
        raise DataError("panel needs at least two branch results")
    hr = scene.hr_reference
    size = (hr.height, hr.width)
    branches = [b for b in BRANCH_ORDER if b in branch_results]
    inputs = {
        Branch.LR: scene.reference_lr,
        Branch.BICUBIC: bicubic_resize(scene.reference_lr, size),
        Branch.HR: hr,
    }
    cells = []
    for b in branches:
        base = _display_rgb(inputs[b], size)
        output = branch_results[b].output
        col = [base, _output_rgb(output, size), _overlay(base, output)]
        cells.append(col)
    h, w = size
    footer = HEADER_H if annotations else 0
    panel = Image.new("RGB", (w * len(branches), HEADER_H + 3 * h + footer), (20, 20, 20))
    draw = ImageDraw.Draw(panel)
    for j, b in enumerate(branches):
        label = b.value if b is not Branch.BICUBIC else f"BICUBIC x{scene.scale_factor}"
        draw.text((j * w + 2, 2), label, fill=(255, 255, 255))
        for i in range(3):
            panel.paste(Image.fromarray(cells[j][i]), (j * w, HEADER_H + i * h))
    if annotations:
        draw.text((2, HEADER_H + 3 * h + 1), str(annotations), fill=(200, 200, 200))
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    panel.save(out_path, format="PNG")
    return out_path
