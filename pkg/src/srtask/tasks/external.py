"""Adapter for externally-hosted task models.

A JSON descriptor declares the task kind and how to invoke it:

    {"kind": "keypoints", "invoke": {"method": "builtin", "params": {"n": 100}}}
    {"kind": "segmentation", "invoke": {"method": "subprocess",
        "argv": ["mymodel", "{input}", "{output}"], "timeout_s": 120}}
    {"kind": "segmentation", "invoke": {"method": "weights",
        "weights_path": "model.wgt"}}

Subprocess exchange format: input is an (H, W, C) float32 `.npy`; output is
`.npy` with a (H, W) probability grid, a (K, 3) x/y/score table, or an
(H, W) integer label grid depending on the kind. Failures are surfaced,
never silently mapped to an empty output.
"""

from __future__ import annotations

import json
import subprocess
import tempfile
from pathlib import Path

import numpy as np

from ..errors import ContractViolationError, DataError, InvocationError
from ..scene_store import Raster
from .keypoints import keypoint_detect
from .outputs import KeypointSet, Partition, SegMask, compact_labels
from .partition import unsupervised_segment
from .segmentation import load_segmentation_model, segmentation_infer

KINDS = ("segmentation", "keypoints", "partition")


def load_descriptor(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"task descriptor not found: {path}")
    desc = json.loads(path.read_text())
    if "weights_path" in desc and "invoke" not in desc:
        desc["invoke"] = {"method": "weights", "weights_path": desc["weights_path"]}
    kind = desc.get("kind")
    if kind not in KINDS:
        raise DataError(f"{path}: descriptor kind must be one of {KINDS}, got {kind!r}")
    if "invoke" not in desc or "method" not in desc["invoke"]:
        raise DataError(f"{path}: descriptor missing invoke.method")
    desc["_dir"] = path.parent
    return desc


def _parse_output(kind, arr, image_shape):
    if kind == "segmentation":
        prob = np.asarray(arr, dtype=np.float64)
        if prob.shape != image_shape:
            raise ContractViolationError(
                f"segmentation output {prob.shape} does not match input {image_shape}")
        return SegMask(prob)  # range check happens in the constructor
    if kind == "keypoints":
        pts = np.asarray(arr, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ContractViolationError(f"keypoint output must be (K, 3), got {pts.shape}")
        pts = pts[np.argsort(-pts[:, 2], kind="stable")]
        return KeypointSet(pts, requested_count=pts.shape[0], image_shape=image_shape)
    labels = np.asarray(arr)
    if labels.shape != image_shape:
        raise ContractViolationError(
            f"partition output {labels.shape} does not match input {image_shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise ContractViolationError(f"partition labels must be integers, got {labels.dtype}")
    if labels.size and labels.min() < 0:
        raise ContractViolationError("partition labels must be non-negative")
    return Partition(compact_labels(labels))


def _run_subprocess(desc, pixels):
    invoke = desc["invoke"]
    with tempfile.TemporaryDirectory(prefix="srtask-ext-") as tmp:
        in_path = Path(tmp) / "input.npy"
        out_path = Path(tmp) / "output.npy"
        np.save(in_path, pixels.astype(np.float32))
        argv = [a.replace("{input}", str(in_path)).replace("{output}", str(out_path))
                for a in invoke["argv"]]
        try:
            proc = subprocess.run(argv, capture_output=True,
                                  timeout=invoke.get("timeout_s", 120))
        except FileNotFoundError as e:
            raise InvocationError(f"external task executable not found: {argv[0]}") from e
        except subprocess.TimeoutExpired as e:
            raise InvocationError(f"external task timed out: {' '.join(argv)}") from e
        if proc.returncode != 0:
            raise InvocationError(
                f"external task exited {proc.returncode}: "
                f"{proc.stderr.decode(errors='replace')[-500:]}")
        if not out_path.exists():
            raise InvocationError("external task wrote no output file")
        try:
            arr = np.load(out_path)
        except Exception as e:
            raise InvocationError(f"external task output unreadable: {e}") from e
    return arr


def external_task_adapter(descriptor, raster):
    """Run a descriptor-declared external model on a raster."""
    desc = descriptor if isinstance(descriptor, dict) else load_descriptor(descriptor)
    pixels = raster.pixels if isinstance(raster, Raster) else np.asarray(raster)
    if pixels.ndim == 2:
        pixels = pixels[:, :, None]
    shape = pixels.shape[:2]
    invoke = desc["invoke"]
    method = invoke["method"]
    if method == "builtin":
        params = invoke.get("params", {})
        if desc["kind"] == "keypoints":
            return keypoint_detect(raster, **params)
        if desc["kind"] == "partition":
            return unsupervised_segment(raster, **params)
        raise DataError("builtin segmentation requires a weights_path descriptor")
    if method == "weights":
        wpath = Path(invoke["weights_path"])
        if not wpath.is_absolute() and "_dir" in desc:
            wpath = desc["_dir"] / wpath
        model = load_segmentation_model(wpath)
        return segmentation_infer(model, raster)
    if method == "subprocess":
        arr = _run_subprocess(desc, pixels)
        return _parse_output(desc["kind"], arr, shape)
    raise DataError(f"unknown invocation method {method!r}")
