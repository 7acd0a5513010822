"""Task-driven super-resolution training.

A small residual SR network (shallow extractor, R residual blocks, sub-pixel
upsampler over a bilinear skip) optimized with a composite of an image loss,
a task loss computed through a frozen task network (output-space BCE against
the thresholded HR task output, or feature-space MSE on the bottleneck), and
an LR-consistency loss against the area-downsampled SR output.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import DataError, TrainingDivergedError
from .metrics import iou
from .scene_store import Raster
from .weights_io import load_tensors, save_tensors, state_dict_to_tensors, tensors_to_state_dict


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0  # image term
    beta: float = 0.1  # task term
    gamma: float = 0.1  # LR-consistency term
    image_norm: str = "L1"
    task_space: str = "output"

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise DataError("loss weights must be non-negative")
        if self.alpha + self.beta + self.gamma <= 0:
            raise DataError("at least one loss weight must be positive")
        if self.image_norm not in ("L1", "L2"):
            raise DataError(f"image_norm must be L1 or L2, got {self.image_norm!r}")
        if self.task_space not in ("output", "feature"):
            raise DataError(f"task_space must be output or feature, got {self.task_space!r}")


class ResBlock(nn.Module):
    def __init__(self, width):
        super().__init__()
        self.conv1 = nn.Conv2d(width, width, 3, padding=1)
        self.conv2 = nn.Conv2d(width, width, 3, padding=1)
        nn.init.zeros_(self.conv2.weight)  # identity residual at init
        nn.init.zeros_(self.conv2.bias)

    def forward(self, x):
        return x + self.conv2(F.relu(self.conv1(x)))


class SRNet(nn.Module):
    """x`scale` single-image SR over a bilinear skip connection.

    With zero-initialized residual tails and output head, the untrained net
    reproduces the bilinear upsample exactly.
    """

    def __init__(self, in_channels=1, scale=3, blocks=8, width=32):
        super().__init__()
        self.in_channels = in_channels
        self.scale = scale
        self.blocks = blocks
        self.width = width
        self.head = nn.Conv2d(in_channels, width, 3, padding=1)
        self.body = nn.ModuleList(ResBlock(width) for _ in range(blocks))
        self.tail = nn.Conv2d(width, in_channels * scale * scale, 3, padding=1)
        nn.init.zeros_(self.tail.weight)
        nn.init.zeros_(self.tail.bias)
        self.shuffle = nn.PixelShuffle(scale)

    def forward(self, x):
        up = F.interpolate(x, scale_factor=self.scale, mode="bilinear",
                           align_corners=False)
        f = F.relu(self.head(x))
        for block in self.body:
            f = block(f)
        return self.shuffle(self.tail(f)) + up


@dataclass
class SRModel:
    net: SRNet
    bands: tuple | None = None

    @property
    def scale(self):
        return self.net.scale


@dataclass
class SRTrainConfig:
    epochs: int = 20
    batch_size: int = 4
    lr: float = 5e-4
    seed: int = 0
    val_fraction: float = 0.2


def sr_infer(model, lr_raster):
    """Deterministic forward pass; dims xS, values clamped to [0, 1]."""
    if isinstance(lr_raster, Raster):
        raster = lr_raster.select_bands(model.bands) if model.bands else lr_raster
        arr = raster.pixels
        out_gsd = raster.gsd / model.scale
        bands = raster.bands
    else:
        arr = np.asarray(lr_raster)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        out_gsd = None
        bands = None
    if arr.shape[2] != model.net.in_channels:
        raise DataError(f"SR model expects {model.net.in_channels} bands, got {arr.shape[2]}")
    x = torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1))[None]).float()
    model.net.eval()
    with torch.no_grad():
        y = model.net(x).clamp_(0.0, 1.0)[0].numpy().transpose(1, 2, 0)
    if out_gsd is None:
        return y.astype(np.float32)
    return Raster(y.astype(np.float32), bands, out_gsd)


def _check_finite(name, t):
    if not torch.isfinite(t).all():
        raise DataError(f"{name} contains non-finite values")


def _task_logits(task_net, x, want_features=False):
    if want_features:
        return task_net(x, return_features=True)
    return task_net(x)


def composite_loss(sr, hr, lr, task_model, weights, task_channels=None):
    """Weighted task-driven loss with a per-term breakdown.

    sr/hr are (B, C, H, W) tensors on the HR grid; lr is (B, C, h, w) with
    H = S*h. The task model (when beta > 0) runs in eval mode with gradients
    flowing to the SR pixels only. Returns (total, {l_img, l_task, l_cons,
    total}).
    """
    if sr.shape != hr.shape:
        raise DataError(f"sr {tuple(sr.shape)} and hr {tuple(hr.shape)} dims disagree")
    if sr.shape[-2] % lr.shape[-2] or sr.shape[-1] % lr.shape[-1]:
        raise DataError("sr dims must be an integer multiple of lr dims")
    scale = sr.shape[-2] // lr.shape[-2]
    if sr.shape[-1] // lr.shape[-1] != scale:
        raise DataError("sr/lr scale factor differs between axes")
    for name, t in (("sr", sr), ("hr", hr), ("lr", lr)):
        _check_finite(name, t)
    hr = hr.to(sr.dtype)
    lr = lr.to(sr.dtype)
    zero = sr.new_zeros(())

    if weights.alpha > 0:
        diff = sr - hr
        l_img = diff.abs().mean() if weights.image_norm == "L1" else (diff ** 2).mean()
    else:
        l_img = zero

    if weights.beta > 0:
        if task_model is None:
            raise DataError("task term requested (beta > 0) but no task model given")
        net = task_model.net
        net.eval()
        x_sr = sr if task_channels is None else sr[:, task_channels]
        x_hr = hr if task_channels is None else hr[:, task_channels]
        if weights.task_space == "output":
            logits_sr = _task_logits(net, x_sr)
            with torch.no_grad():
                hard = (torch.sigmoid(_task_logits(net, x_hr))
                        >= task_model.threshold).to(sr.dtype)
            l_task = F.binary_cross_entropy_with_logits(logits_sr, hard)
        else:
            _, feat_sr = _task_logits(net, x_sr, want_features=True)
            with torch.no_grad():
                _, feat_hr = _task_logits(net, x_hr, want_features=True)
            l_task = ((feat_sr - feat_hr) ** 2).mean()
    else:
        l_task = zero

    if weights.gamma > 0:
        down = F.avg_pool2d(sr, kernel_size=scale, stride=scale)
        l_cons = (down - lr).abs().mean()
    else:
        l_cons = zero

    total = weights.alpha * l_img + weights.beta * l_task + weights.gamma * l_cons
    breakdown = {"l_img": float(l_img), "l_task": float(l_task),
                 "l_cons": float(l_cons), "total": float(total)}
    return total, breakdown


def _pair_tensors(pairs, bands):
    out = []
    for lr, hr in pairs:
        if isinstance(lr, Raster):
            lr = (lr.select_bands(bands) if bands else lr).pixels
            hr = (hr.select_bands(bands) if bands else hr).pixels
        lr = np.asarray(lr)
        hr = np.asarray(hr)
        if lr.ndim == 2:
            lr = lr[:, :, None]
            hr = hr[:, :, None]
        out.append((torch.from_numpy(np.ascontiguousarray(lr.transpose(2, 0, 1))).float(),
                    torch.from_numpy(np.ascontiguousarray(hr.transpose(2, 0, 1))).float()))
    return out


def _val_task_iou(model, val_pairs, task_model, task_channels):
    """Mean IoU of task output on SR images vs the (thresholded) HR target."""
    from .tasks.segmentation import segmentation_infer

    scores = []
    for lr_t, hr_t in val_pairs:
        sr = sr_infer(model, lr_t.numpy().transpose(1, 2, 0))
        sr_in = sr if task_channels is None else sr[:, :, task_channels]
        hr_in = hr_t.numpy().transpose(1, 2, 0)
        if task_channels is not None:
            hr_in = hr_in[:, :, task_channels]
        out_sr = segmentation_infer(task_model, sr_in)
        out_hr = segmentation_infer(task_model, hr_in)
        scores.append(iou(out_sr.binary, out_hr.binary))
    return float(np.mean(scores)) if scores else float("nan")


def train_task_driven(sr_model, pairs, task_model, weights, config=None,
                      task_channels=None, val_pairs=None):
    """Optimize the composite loss over (lr, hr) pairs.

    The task model is frozen (its parameters take no optimizer steps and are
    excluded from autograd). Returns (best-validation model, per-epoch log
    rows with each loss term and the validation task IoU).
    """
    config = config or SRTrainConfig()
    pairs = list(pairs)
    if not pairs:
        raise DataError("SR training corpus is empty")
    if task_model is not None:
        task_model.net.requires_grad_(False)
        before = {k: v.clone() for k, v in task_model.net.state_dict().items()}
    rng = np.random.default_rng(config.seed)
    tensors = _pair_tensors(pairs, sr_model.bands)
    if val_pairs is None and config.val_fraction > 0 and len(tensors) > 1:
        n_val = max(1, int(round(config.val_fraction * len(tensors))))
        order = rng.permutation(len(tensors))
        val_tensors = [tensors[i] for i in order[:n_val]]
        tensors = [tensors[i] for i in order[n_val:]]
    else:
        val_tensors = _pair_tensors(val_pairs, sr_model.bands) if val_pairs else []

    torch.manual_seed(config.seed)
    net = sr_model.net
    opt = torch.optim.Adam(net.parameters(), lr=config.lr)
    log = []
    best_iou = -math.inf
    best_state = None
    step = 0
    last_finite = None
    for epoch in range(config.epochs):
        net.train()
        perm = rng.permutation(len(tensors))
        sums = {"l_img": 0.0, "l_task": 0.0, "l_cons": 0.0, "total": 0.0}
        n_batches = 0
        for start in range(0, len(perm), config.batch_size):
            idx = perm[start:start + config.batch_size]
            lr_b = torch.stack([tensors[i][0] for i in idx])
            hr_b = torch.stack([tensors[i][1] for i in idx])
            sr = net(lr_b)
            total, terms = composite_loss(sr, hr_b, lr_b, task_model, weights,
                                          task_channels=task_channels)
            if not torch.isfinite(total):
                raise TrainingDivergedError(
                    f"non-finite SR loss at step {step} (epoch {epoch})",
                    step=step, last_finite_loss=last_finite)
            last_finite = terms["total"]
            opt.zero_grad()
            total.backward()
            opt.step()
            for k in sums:
                sums[k] += terms[k]
            n_batches += 1
            step += 1
        row = {"epoch": epoch, **{k: sums[k] / n_batches for k in sums}}
        if val_tensors and task_model is not None:
            row["val_iou"] = _val_task_iou(sr_model, val_tensors, task_model, task_channels)
            if row["val_iou"] > best_iou:
                best_iou = row["val_iou"]
                best_state = copy.deepcopy(net.state_dict())
        else:
            row["val_iou"] = float("nan")
        log.append(row)
    if best_state is not None:
        net.load_state_dict(best_state)
    if task_model is not None:
        after = task_model.net.state_dict()
        for k, v in before.items():
            if not torch.equal(v, after[k]):
                raise RuntimeError(f"frozen task parameter {k} changed during SR training")
    return sr_model, log


def write_training_log(path, log):
    """CSV: epoch, l_img, l_task, l_cons, total, val_iou."""
    cols = ["epoch", "l_img", "l_task", "l_cons", "total", "val_iou"]
    lines = [",".join(cols)]
    for row in log:
        lines.append(",".join(repr(row[c]) if c != "epoch" else str(row[c]) for c in cols))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def save_sr_model(path, model):
    meta = {"kind": "sr", "arch": {"in_channels": model.net.in_channels,
                                   "scale": model.net.scale,
                                   "blocks": model.net.blocks,
                                   "width": model.net.width,
                                   "bands": list(model.bands) if model.bands else None}}
    save_tensors(path, state_dict_to_tensors(model.net.state_dict(), set()), meta=meta)


def load_sr_model(path):
    tensors, meta = load_tensors(path)
    if meta.get("kind") != "sr":
        raise DataError(f"{path}: not an SR model (kind={meta.get('kind')!r})")
    arch = meta["arch"]
    net = SRNet(in_channels=arch["in_channels"], scale=arch["scale"],
                blocks=arch["blocks"], width=arch["width"])
    net.load_state_dict(tensors_to_state_dict(tensors, set()))
    bands = arch.get("bands")
    return SRModel(net, tuple(bands) if bands else None)
