"""Agreement metrics between task outputs, plus reference-only image metrics.

All primary scores live in [0, 1] and identical inputs score 1.0, so the
HR-vs-HR self-comparison is always perfect agreement.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import binary_dilation, binary_erosion, uniform_filter

from .errors import DataError

BOUNDARY_TOLERANCE_PX = 2
DENSITY_GRID = 16


@dataclass(frozen=True)
class AgreementScore:
    primary: float
    components: dict = field(default_factory=dict)
    flags: tuple = ()

    def __post_init__(self):
        if not (0.0 <= self.primary <= 1.0):
            raise DataError(f"primary score {self.primary} outside [0, 1]")


# ---------------------------------------------------------------------------
# Segmentation masks
# ---------------------------------------------------------------------------


def iou(a, b):
    """|A n B| / |A u B|, defined as 1.0 when both masks are empty."""
    a = np.asarray(a, bool)
    b = np.asarray(b, bool)
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


def dice(a, b):
    a = np.asarray(a, bool)
    b = np.asarray(b, bool)
    total = a.sum() + b.sum()
    if total == 0:
        return 1.0
    return float(2.0 * np.logical_and(a, b).sum() / total)


def _boundary(mask):
    m = np.asarray(mask, bool)
    if not m.any():
        return np.zeros_like(m)
    return m & ~binary_erosion(m, border_value=1)


def boundary_f1(a, b, tolerance=BOUNDARY_TOLERANCE_PX):
    """F1 of boundary pixels matched within a pixel tolerance (BF score)."""
    ba = _boundary(a)
    bb = _boundary(b)
    if not ba.any() and not bb.any():
        return 1.0
    if not ba.any() or not bb.any():
        return 0.0
    footprint = _disk(tolerance)
    near_b = binary_dilation(bb, structure=footprint)
    near_a = binary_dilation(ba, structure=footprint)
    precision = (ba & near_b).sum() / ba.sum()
    recall = (bb & near_a).sum() / bb.sum()
    if precision + recall == 0:
        return 0.0
    return float(2 * precision * recall / (precision + recall))


def _disk(radius):
    r = int(radius)
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    return (yy ** 2 + xx ** 2) <= radius ** 2


def agreement_mask(candidate, target):
    """IoU (primary), Dice, boundary-F1 between two binary SegMasks."""
    a = candidate.binary
    b = target.binary
    if a.shape != b.shape:
        raise DataError(f"mask dims disagree: {a.shape} vs {b.shape}")
    return AgreementScore(iou(a, b), components={
        "iou": iou(a, b),
        "dice": dice(a, b),
        "boundary_f1": boundary_f1(a, b),
    })


# ---------------------------------------------------------------------------
# Keypoints
# ---------------------------------------------------------------------------


def _greedy_mutual_matches(xy_a, xy_b, epsilon):
    """Count of greedy closest-pair matches within epsilon (each point used
    at most once). Symmetric in its arguments."""
    if len(xy_a) == 0 or len(xy_b) == 0:
        return 0
    d = np.linalg.norm(xy_a[:, None, :] - xy_b[None, :, :], axis=2)
    matches = 0
    used_a = np.zeros(len(xy_a), bool)
    used_b = np.zeros(len(xy_b), bool)
    flat = np.argsort(d, axis=None, kind="stable")
    for f in flat:
        i, j = divmod(int(f), d.shape[1])
        if d[i, j] > epsilon:
            break
        if used_a[i] or used_b[j]:
            continue
        used_a[i] = used_b[j] = True
        matches += 1
    return matches


def _cell_histogram(xy, image_shape, grid=DENSITY_GRID):
    h, w = image_shape
    hist = np.zeros((grid, grid), dtype=np.float64)
    if len(xy):
        cx = np.clip((xy[:, 0] / w * grid).astype(int), 0, grid - 1)
        cy = np.clip((xy[:, 1] / h * grid).astype(int), 0, grid - 1)
        np.add.at(hist, (cy, cx), 1.0)
        hist /= hist.sum()
    return hist


def jensen_shannon(p, q):
    """JSD (base 2) between two distributions; in [0, 1]."""
    p = np.asarray(p, dtype=np.float64).ravel()
    q = np.asarray(q, dtype=np.float64).ravel()
    m = 0.5 * (p + q)

    def kl(a, b):
        mask = a > 0
        return float(np.sum(a[mask] * np.log2(a[mask] / b[mask])))

    return 0.5 * kl(p, m) + 0.5 * kl(q, m)


def agreement_keypoints(candidate, target, epsilon_px=3.0):
    """Repeatability (primary) and spatial-density divergence.

    Repeatability = greedy mutual nearest matches within epsilon, divided by
    min(|A|, |B|). An empty target scores 0 with an `empty_target` flag.
    """
    if len(target) == 0:
        return AgreementScore(0.0, components={"repeatability": 0.0, "density_jsd": 1.0},
                              flags=("empty_target",))
    if len(candidate) == 0:
        return AgreementScore(0.0, components={"repeatability": 0.0, "density_jsd": 1.0},
                              flags=("empty_candidate",))
    matches = _greedy_mutual_matches(candidate.xy, target.xy, epsilon_px)
    rep = matches / min(len(candidate), len(target))
    jsd = jensen_shannon(_cell_histogram(candidate.xy, candidate.image_shape),
                         _cell_histogram(target.xy, target.image_shape))
    return AgreementScore(float(rep), components={"repeatability": float(rep),
                                                  "density_jsd": float(jsd)})


# ---------------------------------------------------------------------------
# Partitions
# ---------------------------------------------------------------------------


def adjusted_rand_index(labels_a, labels_b):
    """ARI from the contingency table; 1 for identical partitions (up to
    label permutation), ~0 for independent ones, can be negative."""
    a = np.asarray(labels_a).ravel()
    b = np.asarray(labels_b).ravel()
    if a.shape != b.shape:
        raise DataError("partitions must cover the same pixel grid")
    n = a.size
    _, a_inv = np.unique(a, return_inverse=True)
    _, b_inv = np.unique(b, return_inverse=True)
    na = a_inv.max() + 1
    nb = b_inv.max() + 1
    table = np.zeros((na, nb), dtype=np.int64)
    np.add.at(table, (a_inv, b_inv), 1)

    def comb2(x):
        x = np.asarray(x, dtype=np.float64)
        return x * (x - 1.0) / 2.0

    sum_ij = comb2(table).sum()
    sum_a = comb2(table.sum(axis=1)).sum()
    sum_b = comb2(table.sum(axis=0)).sum()
    total = comb2(n)
    expected = sum_a * sum_b / total if total > 0 else 0.0
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        return 1.0  # both partitions are all-singletons or a single block
    return float((sum_ij - expected) / (max_index - expected))


def agreement_partition(candidate, target):
    """max(0, ARI) as the primary score."""
    if candidate.shape != target.shape:
        raise DataError(f"partition dims disagree: {candidate.shape} vs {target.shape}")
    ari = adjusted_rand_index(candidate.labels, target.labels)
    return AgreementScore(max(0.0, ari), components={"ari": float(ari)})


# ---------------------------------------------------------------------------
# Reference-only image metrics (not task scores)
# ---------------------------------------------------------------------------


def psnr(a, b, data_range=1.0):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return float("inf")
    return float(10.0 * np.log10(data_range ** 2 / mse))


def ssim(a, b, data_range=1.0, window=7):
    """Mean SSIM with a uniform window (per channel, averaged)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    vals = []
    for c in range(a.shape[2]):
        x, y = a[:, :, c], b[:, :, c]
        mx = uniform_filter(x, window, mode="nearest")
        my = uniform_filter(y, window, mode="nearest")
        mxx = uniform_filter(x * x, window, mode="nearest")
        myy = uniform_filter(y * y, window, mode="nearest")
        mxy = uniform_filter(x * y, window, mode="nearest")
        vx = mxx - mx * mx
        vy = myy - my * my
        cxy = mxy - mx * my
        s = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx ** 2 + my ** 2 + c1) * (vx + vy + c2))
        vals.append(s.mean())
    return float(np.mean(vals))
