"""Task adapters: a uniform interface turning rasters into TaskOutputs.

Each adapter owns its input preparation (band selection, radiometric
normalization) so the evaluation harness can feed raw branch rasters and,
for batch-norm models, collect adaptation statistics on exactly the inputs
inference will see.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import BandMissingError, DataError
from ..scene_store import Raster, compose_rgb, normalize_radiometry
from .external import external_task_adapter, load_descriptor
from .keypoints import keypoint_detect
from .outputs import KeypointSet, Partition, SegMask, TaskOutput
from .partition import unsupervised_segment
from .segmentation import (SegCorpus, SegSample, SegTrainConfig, SegmentationModel,
                           evaluate_iou, load_segmentation_model,
                           save_segmentation_model, segmentation_infer,
                           segmentation_train)
from .unet import UNet

__all__ = [
    "SegCorpus", "SegSample", "SegTrainConfig", "SegmentationModel", "UNet",
    "KeypointSet", "Partition", "SegMask", "TaskOutput",
    "segmentation_infer", "segmentation_train", "evaluate_iou",
    "save_segmentation_model", "load_segmentation_model",
    "keypoint_detect", "unsupervised_segment",
    "external_task_adapter", "load_descriptor",
    "SegmentationTask", "KeypointTask", "PartitionTask", "ExternalTask",
    "make_task",
]


@dataclass
class SegmentationTask:
    model: SegmentationModel
    task_id: str = "segmentation"
    adaptable = True

    def prepare(self, raster):
        if self.model.bands is not None:
            raster = raster.select_bands(self.model.bands)
        return normalize_radiometry(raster)

    def run(self, prepared, model=None):
        return segmentation_infer(model or self.model, prepared)


@dataclass
class KeypointTask:
    n: int = 1000
    nms_radius: float = 3.0
    task_id: str = "keypoints"
    adaptable = False

    def prepare(self, raster):
        try:
            return compose_rgb(raster)
        except BandMissingError:
            return normalize_radiometry(raster)

    def run(self, prepared, model=None):
        return keypoint_detect(prepared, self.n, nms_radius=self.nms_radius)


@dataclass
class PartitionTask:
    k: float = 0.5
    min_size: int = 0
    task_id: str = "partition"
    adaptable = False

    def prepare(self, raster):
        return normalize_radiometry(raster)

    def run(self, prepared, model=None):
        return unsupervised_segment(prepared, k=self.k, min_size=self.min_size)


@dataclass
class ExternalTask:
    descriptor: dict
    task_id: str = "external"
    adaptable = False

    def prepare(self, raster):
        bands = self.descriptor.get("bands")
        if bands:
            raster = raster.select_bands(bands)
        return normalize_radiometry(raster)

    def run(self, prepared, model=None):
        return external_task_adapter(self.descriptor, prepared)


def make_task(spec):
    """Build a task adapter from a config entry {kind, model?, n?, k?, ...}."""
    kind = spec.get("kind")
    if kind == "segmentation":
        model = spec.get("model")
        if isinstance(model, (str,)) or model is None:
            if model is None:
                raise DataError("segmentation task needs a model path")
            model = load_segmentation_model(model)
        return SegmentationTask(model, task_id=spec.get("id", "segmentation"))
    if kind == "keypoints":
        return KeypointTask(n=int(spec.get("n", 1000)),
                            nms_radius=float(spec.get("nms_radius", 3.0)),
                            task_id=spec.get("id", "keypoints"))
    if kind == "partition":
        return PartitionTask(k=float(spec.get("k", 0.5)),
                             min_size=int(spec.get("min_size", 0)),
                             task_id=spec.get("id", "partition"))
    if kind == "external":
        desc = spec.get("descriptor")
        if isinstance(desc, (str,)):
            desc = load_descriptor(desc)
        return ExternalTask(desc, task_id=spec.get("id", "external"))
    raise DataError(f"unknown task kind {kind!r}")
