"""Trainable binary segmentation task: model wrapper, inference, training."""

from __future__ import annotations

import copy
import warnings
from dataclasses import dataclass, replace

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ..errors import DataError, TrainingDivergedError
from ..scene_store import Raster
from ..weights_io import load_tensors, save_tensors, state_dict_to_tensors, tensors_to_state_dict
from .outputs import SegMask
from .unet import UNet

GSD_MISMATCH_WARN = 0.20


@dataclass
class SegSample:
    """One training pair: image in [0,1], aligned binary mask, shared gsd."""

    image: np.ndarray  # (H, W) or (H, W, C) float
    mask: np.ndarray  # (H, W) uint8 in {0, 1}
    gsd: float

    def __post_init__(self):
        if self.image.shape[:2] != self.mask.shape:
            raise DataError(f"image {self.image.shape[:2]} and mask {self.mask.shape} disagree")


@dataclass
class SegCorpus:
    samples: list
    gsd: float

    def __post_init__(self):
        for s in self.samples:
            if abs(s.gsd - self.gsd) > 1e-6 * max(self.gsd, 1.0):
                raise DataError("corpus samples must share the corpus gsd")


@dataclass
class SegTrainConfig:
    epochs: int = 10
    batch_size: int = 4
    lr: float = 1e-3
    p_inv: float = 0.0
    val_fraction: float = 0.2
    seed: int = 0
    depth: int = 4
    width: int = 32
    threshold: float = 0.5


@dataclass
class SegmentationModel:
    """A trained task network plus the metadata inference needs."""

    net: UNet
    bands: tuple | None  # band ids the net consumes; None = raw channels
    training_gsd: float
    threshold: float = 0.5
    adaptation: dict | None = None

    @property
    def kind(self):
        return "segmentation"

    def bn_module_paths(self):
        return tuple(name for name, m in self.net.named_modules()
                     if isinstance(m, nn.BatchNorm2d))

    def clone(self):
        return replace(self, net=copy.deepcopy(self.net))


def _raster_to_array(model, raster):
    if isinstance(raster, Raster):
        if model.bands is not None:
            raster = raster.select_bands(model.bands)
        arr = raster.pixels
        gsd = raster.gsd
    else:
        arr = np.asarray(raster)
        gsd = None
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.shape[2] != model.net.in_channels:
        raise DataError(f"model expects {model.net.in_channels} channels, got {arr.shape[2]}")
    return arr, gsd


def _pad_to_multiple(x, multiple):
    """Reflect-pad an (1, C, H, W) tensor on the bottom/right edges."""
    h, w = x.shape[-2:]
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph or pw:
        x = F.pad(x, (0, pw, 0, ph), mode="reflect")
    return x, (h, w)


def segmentation_infer(model, raster):
    """Per-pixel foreground probability; deterministic (running stats, no
    dropout). Dims not divisible by 2**depth are reflect-padded and cropped
    back."""
    arr, gsd = _raster_to_array(model, raster)
    m = 2 ** model.net.depth
    if arr.shape[0] < m or arr.shape[1] < m:
        raise DataError(f"image {arr.shape[:2]} smaller than the {m} px receptive-field minimum")
    if gsd is not None and model.training_gsd > 0:
        rel = abs(gsd - model.training_gsd) / model.training_gsd
        if rel > GSD_MISMATCH_WARN:
            warnings.warn(
                f"inference gsd {gsd:.3f} deviates {rel:.0%} from training gsd "
                f"{model.training_gsd:.3f}; segmentation quality is scale-sensitive",
                stacklevel=2)
    x = torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1))[None]).float()
    model.net.eval()
    with torch.no_grad():
        x, (h, w) = _pad_to_multiple(x, m)
        prob = torch.sigmoid(model.net(x))[0, 0, :h, :w].numpy()
    prob = np.clip(prob.astype(np.float64), 0.0, 1.0)
    return SegMask(prob, threshold=model.threshold)


def _iou(binary, mask):
    inter = np.logical_and(binary, mask).sum()
    union = np.logical_or(binary, mask).sum()
    return 1.0 if union == 0 else inter / union


def _sample_tensors(samples):
    xs, ys = [], []
    for s in samples:
        img = s.image[:, :, None] if s.image.ndim == 2 else s.image
        xs.append(torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1))).float())
        ys.append(torch.from_numpy(s.mask.astype(np.float32))[None])
    return xs, ys


def segmentation_train(corpus, config=None, val_samples=None, bands=None):
    """Train the segmentation net with pixelwise BCE and Adam.

    Applies intensity-inversion augmentation with probability `config.p_inv`
    per sample draw. Returns the best-validation-IoU checkpoint (final
    weights when there is no validation split). Raises TrainingDivergedError
    on a non-finite loss.
    """
    from ..adapt import invert_intensity

    config = config or SegTrainConfig()
    samples = list(corpus.samples if isinstance(corpus, SegCorpus) else corpus)
    if not samples:
        raise DataError("training corpus is empty")
    gsd = corpus.gsd if isinstance(corpus, SegCorpus) else samples[0].gsd
    rng = np.random.default_rng(config.seed)
    if val_samples is None and config.val_fraction > 0 and len(samples) > 1:
        n_val = max(1, int(round(config.val_fraction * len(samples))))
        order = rng.permutation(len(samples))
        val_samples = [samples[i] for i in order[:n_val]]
        samples = [samples[i] for i in order[n_val:]]
    val_samples = val_samples or []

    in_channels = samples[0].image.shape[2] if samples[0].image.ndim == 3 else 1
    torch.manual_seed(config.seed)
    net = UNet(in_channels=in_channels, depth=config.depth, width=config.width)
    model = SegmentationModel(net, tuple(bands) if bands else None, gsd,
                              threshold=config.threshold)
    opt = torch.optim.Adam(net.parameters(), lr=config.lr)
    xs, ys = _sample_tensors(samples)
    uniform = len({x.shape for x in xs}) == 1

    best_iou = -1.0
    best_state = None
    last_finite = None
    step = 0
    for epoch in range(config.epochs):
        net.train()
        perm = rng.permutation(len(xs))
        bs = config.batch_size if uniform else 1
        for start in range(0, len(perm), bs):
            idx = perm[start:start + bs]
            batch_x, batch_y = [], []
            for i in idx:
                s = invert_intensity(samples[i], config.p_inv, rng)
                img = s.image[:, :, None] if s.image.ndim == 2 else s.image
                batch_x.append(torch.from_numpy(
                    np.ascontiguousarray(img.transpose(2, 0, 1))).float())
                batch_y.append(ys[i])
            x = torch.stack(batch_x)
            y = torch.stack(batch_y)
            logits = net(x)
            loss = F.binary_cross_entropy_with_logits(logits, y)
            if not torch.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite training loss at step {step} (epoch {epoch})",
                    step=step, last_finite_loss=last_finite)
            last_finite = float(loss)
            opt.zero_grad()
            loss.backward()
            opt.step()
            step += 1
        if val_samples:
            iou = evaluate_iou(model, val_samples)
            if iou > best_iou:
                best_iou = iou
                best_state = copy.deepcopy(net.state_dict())
    if best_state is not None:
        net.load_state_dict(best_state)
    return model


def evaluate_iou(model, samples):
    """Mean IoU of thresholded predictions against sample masks."""
    scores = []
    for s in samples:
        out = segmentation_infer(model, s.image)
        scores.append(_iou(out.binary, s.mask.astype(bool)))
    return float(np.mean(scores)) if scores else 0.0


def save_segmentation_model(path, model):
    bn_paths = set(model.bn_module_paths())
    tensors = state_dict_to_tensors(model.net.state_dict(), bn_paths)
    meta = {
        "kind": "segmentation",
        "arch": {"depth": model.net.depth, "width": model.net.width,
                 "in_channels": model.net.in_channels,
                 "bands": list(model.bands) if model.bands else None},
        "training_gsd": model.training_gsd,
        "threshold": model.threshold,
        "adaptation": model.adaptation,
    }
    save_tensors(path, tensors, meta=meta)


def load_segmentation_model(path):
    tensors, meta = load_tensors(path)
    if meta.get("kind") != "segmentation":
        raise DataError(f"{path}: not a segmentation model (kind={meta.get('kind')!r})")
    arch = meta["arch"]
    net = UNet(in_channels=arch["in_channels"], depth=arch["depth"], width=arch["width"])
    bn_paths = {name for name, m in net.named_modules() if isinstance(m, nn.BatchNorm2d)}
    net.load_state_dict(tensors_to_state_dict(tensors, bn_paths))
    bands = arch.get("bands")
    return SegmentationModel(net, tuple(bands) if bands else None,
                             float(meta["training_gsd"]),
                             threshold=float(meta.get("threshold", 0.5)),
                             adaptation=meta.get("adaptation"))
