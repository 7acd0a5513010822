"""Task output types: the tagged union produced by every task adapter."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractViolationError


@dataclass(frozen=True)
class SegMask:
    """Per-pixel foreground probability plus its thresholded binary mask."""

    prob: np.ndarray  # (H, W) float in [0, 1]
    threshold: float = 0.5
    binary: np.ndarray = None

    def __post_init__(self):
        p = np.asarray(self.prob)
        if p.ndim != 2:
            raise ContractViolationError(f"probability grid must be 2-D, got {p.shape}")
        if p.size and (p.min() < 0.0 or p.max() > 1.0):
            raise ContractViolationError(
                f"probabilities outside [0,1]: min {p.min():.4g} max {p.max():.4g}")
        binary = (p >= self.threshold) if self.binary is None else np.asarray(self.binary, bool)
        if binary.shape != p.shape:
            raise ContractViolationError("binary mask dims must match the probability grid")
        object.__setattr__(self, "prob", p)
        object.__setattr__(self, "binary", binary)

    @property
    def shape(self):
        return self.prob.shape


@dataclass(frozen=True)
class KeypointSet:
    """Scored keypoints, sorted by descending score, inside image bounds."""

    points: np.ndarray  # (K, 3) columns x, y, score
    requested_count: int
    image_shape: tuple  # (H, W) the points live on

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        h, w = self.image_shape
        if pts.size:
            if pts[:, 0].min() < -0.5 or pts[:, 0].max() > w - 0.5:
                raise ContractViolationError("keypoint x coordinates outside image bounds")
            if pts[:, 1].min() < -0.5 or pts[:, 1].max() > h - 0.5:
                raise ContractViolationError("keypoint y coordinates outside image bounds")
            if np.any(np.diff(pts[:, 2]) > 1e-12):
                raise ContractViolationError("keypoints must be sorted by descending score")
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return self.points.shape[0]

    @property
    def xy(self):
        return self.points[:, :2]

    def scaled(self, factor, image_shape):
        """Coordinates multiplied by a scalar (LR -> HR grid lift)."""
        pts = self.points.copy()
        pts[:, :2] *= factor
        h, w = image_shape
        pts[:, 0] = np.clip(pts[:, 0], 0, w - 1)
        pts[:, 1] = np.clip(pts[:, 1], 0, h - 1)
        return KeypointSet(pts, self.requested_count, image_shape)


@dataclass(frozen=True)
class Partition:
    """Integer-labeled pixel partition with labels contiguous from 0."""

    labels: np.ndarray  # (H, W) non-negative int

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim != 2:
            raise ContractViolationError(f"label grid must be 2-D, got {lab.shape}")
        if lab.size and lab.min() < 0:
            raise ContractViolationError("partition labels must be non-negative")
        uniq = np.unique(lab)
        if lab.size and not np.array_equal(uniq, np.arange(len(uniq))):
            raise ContractViolationError("partition labels must be contiguous from 0")
        object.__setattr__(self, "labels", lab)

    @property
    def n_segments(self):
        return int(self.labels.max()) + 1 if self.labels.size else 0

    @property
    def shape(self):
        return self.labels.shape


TaskOutput = SegMask | KeypointSet | Partition


def compact_labels(labels):
    """Relabel an integer grid to contiguous ids ordered by first appearance
    in row-major order (deterministic)."""
    flat = np.asarray(labels).ravel()
    _, first_pos, inverse = np.unique(flat, return_index=True, return_inverse=True)
    order = np.argsort(np.argsort(first_pos))
    return order[inverse].reshape(np.asarray(labels).shape).astype(np.int32)
