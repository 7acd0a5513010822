"""Scene ingestion, validation and persistence.

Dataset layout on disk:

    root/<scene_id>/lr/<k>.png      one or more LR observations
    root/<scene_id>/hr.png          the HR reference
    root/<scene_id>/meta.json       {"gsd_lr", "gsd_hr", "scale", "bands"}
    root/manifest.json              scene ids, splits, provenance

PNG carries 8-bit (1/3/4 channel) or 16-bit (1 channel) integer data; a
native raw format (`.ras`, JSON header + little-endian float32 planes)
round-trips arbitrary band counts bit-exactly. Decoded integers are kept as
raw real values; radiometric normalization is a separate, recorded step.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import BandMissingError, DataError

RAW_MAGIC = b"SRTRAS1\n"

DEFAULT_PERCENTILES = (1.0, 99.0)

RGB_COMPOSITE_BANDS = ("B04", "B03", "B02")


@dataclass(frozen=True)
class NormalizationRecord:
    """Per-band affine maps applied by normalize_radiometry."""

    gain: tuple
    offset: tuple
    degenerate: tuple  # bool per band: percentile window collapsed


@dataclass(frozen=True)
class Raster:
    """A multi-band image grid with ground sampling distance metadata.

    pixels: (H, W, C) float32 array, one 2-D plane per band.
    bands: ordered band identifiers, one per channel.
    gsd: meters per pixel, > 0.
    nodata_mask: optional (H, W) bool grid of invalid pixels.
    """

    pixels: np.ndarray
    bands: tuple
    gsd: float
    nodata_mask: np.ndarray | None = None
    norm: NormalizationRecord | None = None

    def __post_init__(self):
        px = self.pixels
        if px.ndim != 3:
            raise DataError(f"pixels must be (H, W, C), got shape {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise DataError("raster must be nonempty")
        if len(self.bands) != px.shape[2]:
            raise DataError(f"{len(self.bands)} band ids for {px.shape[2]} channels")
        if self.gsd <= 0:
            raise DataError(f"gsd must be positive, got {self.gsd}")
        if self.nodata_mask is not None and self.nodata_mask.shape != px.shape[:2]:
            raise DataError("nodata_mask dims must match the pixel grid")
        object.__setattr__(self, "bands", tuple(self.bands))

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def n_bands(self):
        return self.pixels.shape[2]

    def band(self, name):
        """The (H, W) plane for one band id."""
        try:
            i = self.bands.index(name)
        except ValueError:
            raise BandMissingError(f"band {name!r} not in {self.bands}") from None
        return self.pixels[:, :, i]

    def select_bands(self, names):
        """New Raster restricted to the named bands, in the given order."""
        idx = []
        for name in names:
            if name not in self.bands:
                raise BandMissingError(f"band {name!r} not in {self.bands}")
            idx.append(self.bands.index(name))
        return Raster(self.pixels[:, :, idx], tuple(names), self.gsd,
                      nodata_mask=self.nodata_mask)

    def with_pixels(self, pixels, gsd=None, bands=None):
        """Copy with replaced pixel grid (dims may change; nodata is dropped
        unless the grid keeps its shape)."""
        if pixels.ndim == 2:
            pixels = pixels[:, :, None]
        nodata = self.nodata_mask if (self.nodata_mask is not None
                                      and pixels.shape[:2] == self.pixels.shape[:2]) else None
        return Raster(pixels, bands if bands is not None else self.bands,
                      self.gsd if gsd is None else gsd, nodata_mask=nodata)


@dataclass(frozen=True)
class Scene:
    """One region of interest: LR observations, an HR reference, and S."""

    scene_id: str
    lr_images: tuple
    hr_reference: Raster
    scale_factor: int

    def __post_init__(self):
        if not self.lr_images:
            raise DataError(f"scene {self.scene_id}: needs at least one LR image")
        lr0 = self.lr_images[0]
        for lr in self.lr_images:
            if (lr.height, lr.width) != (lr0.height, lr0.width) or lr.gsd != lr0.gsd:
                raise DataError(f"scene {self.scene_id}: LR images disagree in dims/gsd")
        s = self.scale_factor
        hr = self.hr_reference
        if s < 1:
            raise DataError(f"scene {self.scene_id}: scale factor must be positive")
        if hr.width != s * lr0.width or hr.height != s * lr0.height:
            raise DataError(
                f"scene {self.scene_id}: HR dims {hr.height}x{hr.width} are not "
                f"{s}x the LR dims {lr0.height}x{lr0.width}")
        if abs(hr.gsd * s - lr0.gsd) > 0.01 * lr0.gsd:
            raise DataError(
                f"scene {self.scene_id}: hr.gsd*S = {hr.gsd * s:.4f} deviates from "
                f"lr.gsd = {lr0.gsd:.4f} by more than 1%")
        object.__setattr__(self, "lr_images", tuple(self.lr_images))

    @property
    def reference_lr(self):
        return self.lr_images[0]


@dataclass
class DatasetManifest:
    """Root-level index of a scene dataset."""

    root: Path
    scene_ids: list
    bands: list
    splits: dict = field(default_factory=dict)  # split name -> list of scene ids
    provenance: str = ""

    def __post_init__(self):
        self.root = Path(self.root)
        if len(set(self.scene_ids)) != len(self.scene_ids):
            raise DataError("manifest scene ids must be unique")

    def split(self, name):
        return list(self.splits.get(name, []))


# ---------------------------------------------------------------------------
# Raster file I/O
# ---------------------------------------------------------------------------


def _decode_png(path):
    img = Image.open(path)
    arr = np.asarray(img)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr.astype(np.float32)


def save_raster(path, raster):
    """Write a raster. `.ras` is the native bit-exact format; `.png` encodes
    1 band as 16-bit grayscale and 3/4 bands as 8-bit RGB(A), scaling [0,1]
    floats to the integer range."""
    path = Path(path)
    if path.suffix == ".ras":
        _save_ras(path, raster)
    elif path.suffix == ".png":
        _save_png(path, raster)
    else:
        raise DataError(f"unsupported raster format {path.suffix!r}")


def _save_ras(path, raster):
    header = {
        "width": raster.width,
        "height": raster.height,
        "bands": list(raster.bands),
        "gsd": raster.gsd,
        "nodata": raster.nodata_mask is not None,
    }
    blob = json.dumps(header, sort_keys=True).encode() + b"\n"
    with open(path, "wb") as f:
        f.write(RAW_MAGIC)
        f.write(len(blob).to_bytes(8, "little"))
        f.write(blob)
        f.write(np.ascontiguousarray(raster.pixels, dtype="<f4").tobytes())
        if raster.nodata_mask is not None:
            f.write(np.ascontiguousarray(raster.nodata_mask, dtype=np.uint8).tobytes())


def _load_ras(path):
    with open(path, "rb") as f:
        magic = f.read(len(RAW_MAGIC))
        if magic != RAW_MAGIC:
            raise DataError(f"{path}: not a native raster file")
        n = int.from_bytes(f.read(8), "little")
        header = json.loads(f.read(n).decode())
        h, w, c = header["height"], header["width"], len(header["bands"])
        px = np.frombuffer(f.read(h * w * c * 4), dtype="<f4").reshape(h, w, c)
        nodata = None
        if header.get("nodata"):
            nodata = np.frombuffer(f.read(h * w), dtype=np.uint8).reshape(h, w).astype(bool)
    return Raster(px.copy(), tuple(header["bands"]), float(header["gsd"]), nodata_mask=nodata)


def _save_png(path, raster):
    px = raster.pixels
    lo, hi = float(px.min()), float(px.max())
    if lo < 0.0 or hi > 1.0:
        raise DataError("PNG export expects normalized [0,1] pixels; use .ras for raw data")
    if raster.n_bands == 1:
        q = np.round(px[:, :, 0] * 65535.0).astype(np.uint16)
        Image.fromarray(q, mode="I;16").save(path)
    elif raster.n_bands in (3, 4):
        q = np.round(px * 255.0).astype(np.uint8)
        Image.fromarray(q).save(path)
    else:
        raise DataError(f"PNG supports 1/3/4 bands, got {raster.n_bands}; use .ras")


def load_raster(path, bands=None, gsd=None):
    """Load a raster from PNG or the native raw format.

    Integer PNG samples are converted to real values without rescaling
    (16-bit white stays 65535.0). Band names and gsd come from a `<path>.json`
    sidecar when present; explicit arguments override, and a missing gsd
    falls back to 1.0. When `bands` names a subset of the stored bands, only
    those are returned.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"raster file not found: {path}")
    sidecar = path.with_suffix(path.suffix + ".json")
    meta = {}
    if sidecar.exists():
        meta = json.loads(sidecar.read_text())
    if path.suffix == ".ras":
        raster = _load_ras(path)
        if gsd is not None:
            raster = replace(raster, gsd=float(gsd))
    elif path.suffix == ".png":
        px = _decode_png(path)
        file_bands = meta.get("bands")
        if file_bands is None:
            file_bands = [f"B{i + 1}" for i in range(px.shape[2])]
        if len(file_bands) != px.shape[2]:
            raise DataError(f"{path}: sidecar lists {len(file_bands)} bands for "
                            f"{px.shape[2]} channels")
        g = gsd if gsd is not None else meta.get("gsd", 1.0)
        raster = Raster(px, tuple(file_bands), float(g))
    else:
        raise DataError(f"unsupported raster format {path.suffix!r}")
    if bands is not None and tuple(bands) != raster.bands:
        raster = raster.select_bands(bands)
    return raster


# ---------------------------------------------------------------------------
# Scene and manifest I/O
# ---------------------------------------------------------------------------


def scene_dir(root, scene_id):
    return Path(root) / scene_id


def save_scene(root, scene, image_format="png"):
    """Write a scene in the dataset layout. Normalized scenes use PNG;
    `image_format="ras"` keeps float data bit-exact."""
    d = scene_dir(root, scene.scene_id)
    (d / "lr").mkdir(parents=True, exist_ok=True)
    ext = "." + image_format
    for k, lr in enumerate(scene.lr_images):
        save_raster(d / "lr" / f"{k}{ext}", lr)
    save_raster(d / ("hr" + ext), scene.hr_reference)
    meta = {
        "gsd_lr": scene.reference_lr.gsd,
        "gsd_hr": scene.hr_reference.gsd,
        "scale": scene.scale_factor,
        "bands": list(scene.hr_reference.bands),
        "format": image_format,
    }
    (d / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def load_scene(root, scene_id, bands=None):
    """Load and validate one scene from the dataset layout."""
    d = scene_dir(root, scene_id)
    meta_path = d / "meta.json"
    if not meta_path.exists():
        raise DataError(f"scene {scene_id}: missing {meta_path}")
    meta = json.loads(meta_path.read_text())
    ext = "." + meta.get("format", "png")
    scene_bands = meta.get("bands")
    lr_paths = sorted((d / "lr").glob(f"*{ext}"))
    if not lr_paths:
        raise DataError(f"scene {scene_id}: no LR images under {d / 'lr'}")
    lr_images = []
    for p in lr_paths:
        r = load_raster(p, gsd=meta["gsd_lr"])
        if scene_bands:
            r = Raster(r.pixels, tuple(scene_bands), r.gsd, nodata_mask=r.nodata_mask)
        lr_images.append(r)
    hr = load_raster(d / ("hr" + ext), gsd=meta["gsd_hr"])
    if scene_bands:
        hr = Raster(hr.pixels, tuple(scene_bands), hr.gsd, nodata_mask=hr.nodata_mask)
    scene = Scene(scene_id, tuple(lr_images), hr, int(meta["scale"]))
    if bands is not None:
        scene = Scene(scene_id, tuple(r.select_bands(bands) for r in lr_images),
                      hr.select_bands(bands), scene.scale_factor)
    return scene


def save_manifest(manifest):
    payload = {
        "scenes": list(manifest.scene_ids),
        "bands": list(manifest.bands),
        "splits": {k: list(v) for k, v in manifest.splits.items()},
        "provenance": manifest.provenance,
    }
    path = Path(manifest.root) / "manifest.json"
    path.write_text(json.dumps(payload, indent=2, sort_keys=True))
    return path


def load_manifest(root, validate=False):
    root = Path(root)
    path = root / "manifest.json"
    if not path.exists():
        raise DataError(f"no manifest.json under {root}")
    payload = json.loads(path.read_text())
    manifest = DatasetManifest(root, payload["scenes"], payload.get("bands", []),
                               splits=payload.get("splits", {}),
                               provenance=payload.get("provenance", ""))
    if validate:
        for sid in manifest.scene_ids:
            load_scene(root, sid)
    return manifest


# ---------------------------------------------------------------------------
# Radiometry
# ---------------------------------------------------------------------------


def normalize_radiometry(raster, p_low=DEFAULT_PERCENTILES[0], p_high=DEFAULT_PERCENTILES[1]):
    """Linearly map each band so its [p_low, p_high] percentile window becomes
    [0, 1], clamped. Degenerate bands (collapsed window) map to constant 0.5
    and are flagged. The applied gain/offset per band is recorded on the
    returned raster."""
    if p_low >= p_high:
        raise DataError(f"p_low {p_low} must be < p_high {p_high}")
    px = raster.pixels.astype(np.float64)
    valid = None if raster.nodata_mask is None else ~raster.nodata_mask
    out = np.empty_like(px)
    gains, offsets, degenerate = [], [], []
    for c in range(px.shape[2]):
        plane = px[:, :, c]
        sample = plane[valid] if valid is not None else plane
        lo, hi = np.percentile(sample, [p_low, p_high])
        if hi <= lo:
            out[:, :, c] = 0.5
            gains.append(0.0)
            offsets.append(0.5)
            degenerate.append(True)
            continue
        g = 1.0 / (hi - lo)
        out[:, :, c] = np.clip((plane - lo) * g, 0.0, 1.0)
        gains.append(g)
        offsets.append(-lo * g)
        degenerate.append(False)
    rec = NormalizationRecord(tuple(gains), tuple(offsets), tuple(degenerate))
    return Raster(out.astype(np.float32), raster.bands, raster.gsd,
                  nodata_mask=raster.nodata_mask, norm=rec)


def compose_rgb(source, p_low=DEFAULT_PERCENTILES[0], p_high=DEFAULT_PERCENTILES[1]):
    """3-channel (B04, B03, B02) = (R, G, B) composite, normalized.

    Accepts a Raster or a Scene (a Scene composes its HR reference).
    """
    raster = source.hr_reference if isinstance(source, Scene) else source
    sub = raster.select_bands(RGB_COMPOSITE_BANDS)
    return normalize_radiometry(sub, p_low=p_low, p_high=p_high)
