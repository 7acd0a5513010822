"""Procedural scene generator.

Renders HR images of anti-aliased polyline roads and axis-aligned buildings
over a textured background, with pixel-exact ground-truth masks (a pixel is
foreground iff its center lies inside the shape). LR counterparts come from
the degradation pipeline; domain B applies a radiometric gain/bias plus a
nonlinear histogram warp. Everything is deterministic in the spec seed.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError
from .resample import bicubic_resize_array, degrade_simulate
from .scene_store import (DatasetManifest, Raster, Scene, load_manifest, load_scene,
                          normalize_radiometry, save_manifest, save_scene, scene_dir)
from .tasks.segmentation import SegCorpus, SegSample

DEFAULT_BANDS = ("B02", "B03", "B04", "B08")

# relative strength of feature contrast per band (index-aligned with bands)
_BAND_ROAD_GAIN = {"B02": 0.9, "B03": 1.0, "B04": 1.1, "B08": 1.2}
_BAND_BUILDING_GAIN = {"B02": 1.1, "B03": 1.0, "B04": 0.9, "B08": 0.8}


@dataclass(frozen=True)
class SynthSpec:
    height: int = 96
    width: int = 96
    scale: int = 3
    hr_gsd: float = 10.0 / 3.0
    bands: tuple = DEFAULT_BANDS
    n_lr: int = 1
    n_roads: tuple = (2, 4)  # inclusive range
    road_width: tuple = (4.0, 8.0)  # px at HR scale
    n_buildings: tuple = (4, 8)
    building_size: tuple = (8, 20)
    background_level: float = 0.35
    texture_amplitude: float = 0.08
    road_contrast: float = 0.30
    building_contrast: float = 0.25
    domain_gain: float = 1.0
    domain_bias: float = 0.15
    domain_warp: float = 0.55  # gamma exponent of the histogram warp
    blur_sigma: float = 1.0
    noise_sigma: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.road_width[0] < 1.0:
            raise DataError("road widths below 1 px at HR scale are not renderable")
        if self.height % self.scale or self.width % self.scale:
            raise DataError("canvas dims must be divisible by the scale factor")


def _segment_distance(px, py, p0, p1):
    """Distance from pixel centers (px, py arrays) to segment p0-p1."""
    d = p1 - p0
    denom = float(d @ d)
    if denom == 0:
        return np.hypot(px - p0[0], py - p0[1])
    t = np.clip(((px - p0[0]) * d[0] + (py - p0[1]) * d[1]) / denom, 0.0, 1.0)
    return np.hypot(px - (p0[0] + t * d[0]), py - (p0[1] + t * d[1]))


def _random_polyline(rng, h, w):
    """2-3 segment polyline crossing the canvas between opposite borders."""
    if rng.random() < 0.5:
        start = np.array([0.0, rng.uniform(0, h - 1)])
        end = np.array([w - 1.0, rng.uniform(0, h - 1)])
    else:
        start = np.array([rng.uniform(0, w - 1), 0.0])
        end = np.array([rng.uniform(0, w - 1), h - 1.0])
    n_mid = int(rng.integers(1, 3))
    ts = np.sort(rng.uniform(0.25, 0.75, size=n_mid))
    jitter = rng.uniform(-0.15, 0.15, size=(n_mid, 2)) * np.array([w, h])
    mids = start[None, :] + ts[:, None] * (end - start)[None, :] + jitter
    pts = np.vstack([start, mids, end])
    pts[:, 0] = np.clip(pts[:, 0], 0, w - 1)
    pts[:, 1] = np.clip(pts[:, 1], 0, h - 1)
    return pts


def _render_background(rng, h, w, n_bands, level, amplitude):
    coarse_h, coarse_w = max(h // 12, 2), max(w // 12, 2)
    bg = np.empty((h, w, n_bands))
    for c in range(n_bands):
        coarse = rng.normal(0.0, 1.0, size=(coarse_h, coarse_w))
        smooth = bicubic_resize_array(coarse, (h, w), clamp_range=False)
        fine = rng.normal(0.0, 0.25, size=(h, w))
        bg[:, :, c] = level + amplitude * (smooth + fine)
    return bg


def generate_scene(spec, scene_id="scene", apply_domain_shift=False):
    """One scene plus its exact road and building ground-truth masks."""
    rng = np.random.default_rng(spec.seed)
    h, w = spec.height, spec.width
    n_bands = len(spec.bands)
    yy, xx = np.mgrid[0:h, 0:w]
    px, py = xx.astype(np.float64), yy.astype(np.float64)

    img = _render_background(rng, h, w, n_bands, spec.background_level,
                             spec.texture_amplitude)

    road_mask = np.zeros((h, w), dtype=np.uint8)
    road_alpha = np.zeros((h, w))
    n_roads = int(rng.integers(spec.n_roads[0], spec.n_roads[1] + 1))
    for _ in range(n_roads):
        pts = _random_polyline(rng, h, w)
        width = rng.uniform(*spec.road_width)
        dist = np.full((h, w), np.inf)
        for i in range(len(pts) - 1):
            dist = np.minimum(dist, _segment_distance(px, py, pts[i], pts[i + 1]))
        road_mask |= (dist <= width / 2.0).astype(np.uint8)
        road_alpha = np.maximum(road_alpha, np.clip(width / 2.0 + 0.5 - dist, 0.0, 1.0))

    building_mask = np.zeros((h, w), dtype=np.uint8)
    n_buildings = int(rng.integers(spec.n_buildings[0], spec.n_buildings[1] + 1))
    placed = 0
    tries = 0
    while placed < n_buildings:
        tries += 1
        if tries > 500:
            raise DataError(f"could not place {n_buildings} buildings on {h}x{w} canvas")
        bw = int(rng.integers(spec.building_size[0], spec.building_size[1] + 1))
        bh = int(rng.integers(spec.building_size[0], spec.building_size[1] + 1))
        if bw + 2 >= w or bh + 2 >= h:
            continue
        x0 = int(rng.integers(1, w - bw - 1))
        y0 = int(rng.integers(1, h - bh - 1))
        pad = (slice(max(y0 - 1, 0), y0 + bh + 1), slice(max(x0 - 1, 0), x0 + bw + 1))
        if building_mask[pad].any() or road_mask[pad].any():
            continue
        building_mask[y0:y0 + bh, x0:x0 + bw] = 1
        placed += 1

    for c, band in enumerate(spec.bands):
        img[:, :, c] += (road_alpha * spec.road_contrast * _BAND_ROAD_GAIN.get(band, 1.0)
                         + building_mask * spec.building_contrast
                         * _BAND_BUILDING_GAIN.get(band, 1.0))
    img = np.clip(img, 0.0, 1.0)
    if apply_domain_shift:
        img = np.clip(spec.domain_gain * img + spec.domain_bias, 0.0, 1.0)
        if spec.domain_warp != 1.0:
            img = img ** spec.domain_warp

    hr = Raster(img.astype(np.float32), spec.bands, spec.hr_gsd)
    lrs = []
    for _ in range(spec.n_lr):
        lr_seed = int(rng.integers(2 ** 31))
        lrs.append(degrade_simulate(hr, spec.scale, blur_sigma=spec.blur_sigma,
                                    noise_sigma=spec.noise_sigma, seed=lr_seed))
    scene = Scene(scene_id, tuple(lrs), hr, spec.scale)
    return scene, road_mask, building_mask


def _save_mask(path, mask):
    Image.fromarray((mask.astype(np.uint8) * 255)).save(path)


def load_mask(path):
    arr = np.asarray(Image.open(path))
    return (arr > 127).astype(np.uint8)


def load_ground_truth(root, scene_id):
    d = scene_dir(root, scene_id) / "masks"
    return load_mask(d / "roads.png"), load_mask(d / "buildings.png")


def generate_corpus(spec, n_scenes, root, domain="A",
                    split_fractions=(0.6, 0.2, 0.2)):
    """Write n scenes in the scene-store layout with exact ground truth.

    Domain B applies the spec's gain/bias plus histogram warp. Splits are
    assigned round-robin by index to hit the requested fractions.
    """
    if n_scenes < 1:
        raise DataError("need at least one scene")
    if domain not in ("A", "B"):
        raise DataError(f"domain must be A or B, got {domain!r}")
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    seed_seq = np.random.SeedSequence(spec.seed)
    child_seeds = seed_seq.generate_state(n_scenes)
    scene_ids = []
    for i in range(n_scenes):
        sid = f"scene{i:04d}"
        sspec = replace(spec, seed=int(child_seeds[i]))
        scene, roads, buildings = generate_scene(sspec, scene_id=sid,
                                                 apply_domain_shift=(domain == "B"))
        save_scene(root, scene)
        mask_dir = scene_dir(root, sid) / "masks"
        mask_dir.mkdir(exist_ok=True)
        _save_mask(mask_dir / "roads.png", roads)
        _save_mask(mask_dir / "buildings.png", buildings)
        scene_ids.append(sid)
    n_train = int(round(split_fractions[0] * n_scenes))
    n_val = int(round(split_fractions[1] * n_scenes))
    splits = {
        "train": scene_ids[:n_train],
        "val": scene_ids[n_train:n_train + n_val],
        "test": scene_ids[n_train + n_val:],
    }
    manifest = DatasetManifest(root, scene_ids, list(spec.bands), splits=splits,
                               provenance=json.dumps(
                                   {"generator": "srtask.synth", "domain": domain,
                                    "spec": {**asdict(spec), "bands": list(spec.bands)}},
                                   sort_keys=True))
    save_manifest(manifest)
    return manifest


def seg_corpus_from_manifest(manifest_or_root, split, target="roads",
                             bands=("B08",), normalized=True):
    """Build a segmentation training corpus from generated scenes.

    Uses the HR reference restricted to `bands` (percentile-normalized, as
    the evaluation harness prepares task inputs) paired with the exact
    ground-truth mask for `target`.
    """
    manifest = (manifest_or_root if isinstance(manifest_or_root, DatasetManifest)
                else load_manifest(manifest_or_root))
    ids = manifest.split(split) or manifest.scene_ids
    samples = []
    gsd = None
    for sid in ids:
        scene = load_scene(manifest.root, sid)
        roads, buildings = load_ground_truth(manifest.root, sid)
        mask = roads if target == "roads" else buildings
        hr = scene.hr_reference.select_bands(bands)
        if normalized:
            hr = normalize_radiometry(hr)
        img = hr.pixels[:, :, 0] if hr.n_bands == 1 else hr.pixels
        samples.append(SegSample(np.asarray(img, dtype=np.float32), mask, hr.gsd))
        gsd = hr.gsd
    if not samples:
        raise DataError(f"split {split!r} is empty")
    return SegCorpus(samples, gsd)
