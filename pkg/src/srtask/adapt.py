"""Domain adaptation of trained task models.

Batch-norm statistics recalibration (sample-wise and dataset-wise), GSD
rescaling of training corpora, and intensity-inversion augmentation.

Statistics are collected with the network's BN layers normalizing by
per-image batch statistics (running buffers untouched). That makes the
collected stats a pure function of (weights, image): collection is
order/partition independent, and re-collecting after installation
reproduces the installed values - the recalibrated model is a fixed point.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
import torch
from torch import nn

from .errors import DataError
from .resample import area_resize_array, resize_mask
from .scene_store import Raster
from .tasks.segmentation import SegCorpus, SegSample, SegmentationModel, _raster_to_array


class AdaptMode(str, Enum):
    NONE = "none"
    SAMPLE_WISE = "sample_wise"
    DATASET_WISE = "dataset_wise"


@dataclass(frozen=True)
class NormStats:
    """Per-channel running statistics with an exact parallel merge.

    Variance is the unbiased estimator; merge(a, b) equals the stats of the
    concatenated sample (Chan et al. pairwise update).
    """

    mean: np.ndarray
    var: np.ndarray
    count: int

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        object.__setattr__(self, "var", np.asarray(self.var, dtype=np.float64))
        if self.count < 1:
            raise DataError("NormStats needs at least one sample")
        if np.any(self.var < -1e-12):
            raise DataError("variance must be non-negative")

    @classmethod
    def from_values(cls, values):
        """Stats of an (N, C) sample of activations."""
        v = np.asarray(values, dtype=np.float64)
        if v.ndim == 1:
            v = v[:, None]
        n = v.shape[0]
        mean = v.mean(axis=0)
        var = v.var(axis=0, ddof=1) if n > 1 else np.zeros(v.shape[1])
        return cls(mean, var, n)

    def merge(self, other):
        na, nb = self.count, other.count
        n = na + nb
        delta = other.mean - self.mean
        mean = self.mean + delta * (nb / n)
        m2a = self.var * max(na - 1, 0)
        m2b = other.var * max(nb - 1, 0)
        m2 = m2a + m2b + delta ** 2 * (na * nb / n)
        var = m2 / (n - 1) if n > 1 else np.zeros_like(mean)
        return NormStats(mean, var, n)


def _bn_modules(net):
    return {name: m for name, m in net.named_modules() if isinstance(m, nn.BatchNorm2d)}


def _iter_images(model, images):
    for img in images:
        arr, _ = _raster_to_array(model, img)
        yield torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1))[None]).float()


def compute_activation_stats(model, images):
    """Per-BN-layer NormStats of pre-normalization activations.

    Each image runs through the net independently (batch of one, batch-stat
    normalization), so the result is invariant to ordering and to how the
    image set is partitioned across merges.
    """
    images = list(images)
    if not images:
        raise DataError("compute_activation_stats needs at least one image")
    net = model.net
    layers = _bn_modules(net)
    acc: dict = {name: None for name in layers}
    hooks = []

    def make_hook(name):
        def hook(_module, inputs):
            x = inputs[0].detach()
            flat = x.transpose(0, 1).reshape(x.shape[1], -1).T.numpy()
            stats = NormStats.from_values(flat)
            acc[name] = stats if acc[name] is None else acc[name].merge(stats)
        return hook

    for name, m in layers.items():
        hooks.append(m.register_forward_pre_hook(make_hook(name)))
    saved_momentum = {name: m.momentum for name, m in layers.items()}
    saved_tracked = {name: m.num_batches_tracked.clone() for name, m in layers.items()}
    was_training = net.training
    try:
        net.train()
        for m in layers.values():
            m.momentum = 0.0  # batch-stat normalization, running buffers untouched
        with torch.no_grad():
            for x in _iter_images(model, images):
                net(x)
    finally:
        for h in hooks:
            h.remove()
        for name, m in layers.items():
            m.momentum = saved_momentum[name]
            m.num_batches_tracked.copy_(saved_tracked[name])
        net.train(was_training)
    return acc


def extract_model_stats(model):
    """The BN running statistics currently installed in a model."""
    out = {}
    for name, m in _bn_modules(model.net).items():
        out[name] = NormStats(m.running_mean.numpy().astype(np.float64),
                              m.running_var.numpy().astype(np.float64),
                              max(int(m.num_batches_tracked), 1))
    return out


def recalibrate(model, stats, adaptation=None):
    """New model with BN running mean/variance replaced by `stats`.

    Convolution weights and BN affine parameters are untouched; the input
    model is not modified.
    """
    new_model = model.clone()
    layers = _bn_modules(new_model.net)
    if set(stats) != set(layers):
        raise DataError(
            f"stats cover {len(stats)} layers but the model has {len(layers)} BN layers: "
            f"missing {sorted(set(layers) - set(stats))[:3]}...")
    with torch.no_grad():
        for name, m in layers.items():
            s = stats[name]
            if s.mean.shape[0] != m.num_features:
                raise DataError(f"layer {name}: {s.mean.shape[0]} channels vs {m.num_features}")
            m.running_mean.copy_(torch.from_numpy(s.mean).float())
            m.running_var.copy_(torch.from_numpy(np.maximum(s.var, 0.0)).float())
    if adaptation is not None:
        new_model.adaptation = adaptation
    return new_model


def adapt_model(model, scope, image_or_dataset=None):
    """compute_activation_stats followed by recalibrate, per the scope.

    `sample_wise` expects one image, `dataset_wise` an iterable of images;
    `none` returns the model unchanged.
    """
    scope = AdaptMode(scope)
    if scope is AdaptMode.NONE:
        return model
    if scope is AdaptMode.SAMPLE_WISE:
        if image_or_dataset is None or isinstance(image_or_dataset, (list, tuple)):
            raise DataError("sample_wise adaptation takes exactly one image")
        images = [image_or_dataset]
    else:
        images = list(image_or_dataset or [])
        if not images:
            raise DataError("dataset_wise adaptation needs a nonempty dataset")
    stats = compute_activation_stats(model, images)
    meta = {"mode": scope.value, "stats_source": "target_domain",
            "n_images": len(images)}
    return recalibrate(model, stats, adaptation=meta)


def rescale_training_corpus(corpus, source_gsd, target_gsd):
    """Downsample images and masks of a corpus to a coarser gsd.

    Images use area averaging, masks the 0.5-threshold binarization, both to
    the identical rounded dims; the corpus gsd metadata is updated to the
    width-derived actual value.
    """
    if target_gsd < source_gsd:
        raise DataError("target gsd must be coarser (larger) than source gsd")
    if target_gsd == source_gsd:
        return corpus
    out = []
    actual_gsd = None
    for s in corpus.samples:
        if abs(s.gsd - source_gsd) > 1e-9 * source_gsd:
            raise DataError(f"sample gsd {s.gsd} differs from stated source {source_gsd}")
        h, w = s.mask.shape
        th = int(round(h * source_gsd / target_gsd))
        tw = int(round(w * source_gsd / target_gsd))
        if th < 4 or tw < 4:
            raise DataError(f"rescaled dims {th}x{tw} fall below the 4 px minimum")
        img = area_resize_array(np.asarray(s.image, dtype=np.float64), (th, tw))
        mask = resize_mask(s.mask, (th, tw))
        assert img.shape[:2] == mask.shape
        gsd = source_gsd * w / tw
        actual_gsd = gsd if actual_gsd is None else actual_gsd
        out.append(SegSample(img.astype(np.float32), mask, gsd))
    return SegCorpus(out, actual_gsd)


def invert_intensity(sample, p, rng):
    """With probability p, map every pixel v -> 1-v; the mask is untouched.

    `rng` may be a numpy Generator or an integer seed. Always consumes one
    draw so sequences stay aligned across p values.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    if rng.random() >= p:
        return sample
    if isinstance(sample, SegSample):
        return SegSample(1.0 - sample.image, sample.mask, sample.gsd)
    if isinstance(sample, Raster):
        return sample.with_pixels(1.0 - sample.pixels)
    return 1.0 - np.asarray(sample)
