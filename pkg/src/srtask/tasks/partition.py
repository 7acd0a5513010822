"""Reference unsupervised segmenter: greedy graph-based region merging.

4-connected grid graph, edge weight = Euclidean intensity difference across
channels. Components C1, C2 merge when the joining edge weight w satisfies
w <= min(Int(Ci) + k/|Ci|) where Int is the largest edge weight previously
absorbed into the component. Deterministic: edges are processed in
(weight, row, col, direction) order.
"""

from __future__ import annotations

import numpy as np

from ..scene_store import Raster
from .outputs import Partition, compact_labels

DEFAULT_K = 0.5


class _UnionFind:
    def __init__(self, n):
        self.parent = np.arange(n)
        self.size = np.ones(n, dtype=np.int64)

    def find(self, x):
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b):
        if self.size[a] < self.size[b]:
            a, b = b, a
        self.parent[b] = a
        self.size[a] += self.size[b]
        return a


def _grid_edges(pixels):
    """Right and down neighbor edges with weights, plus deterministic keys."""
    h, w, _ = pixels.shape
    ids = np.arange(h * w).reshape(h, w)
    edges = []
    diff_r = np.sqrt(((pixels[:, 1:, :] - pixels[:, :-1, :]) ** 2).sum(axis=2))
    a = ids[:, :-1].ravel()
    b = ids[:, 1:].ravel()
    rows, cols = np.divmod(a, w)
    edges.append(np.column_stack([diff_r.ravel(), rows, cols,
                                  np.zeros(a.size), a, b]))
    diff_d = np.sqrt(((pixels[1:, :, :] - pixels[:-1, :, :]) ** 2).sum(axis=2))
    a = ids[:-1, :].ravel()
    b = ids[1:, :].ravel()
    rows, cols = np.divmod(a, w)
    edges.append(np.column_stack([diff_d.ravel(), rows, cols,
                                  np.ones(a.size), a, b]))
    return np.vstack(edges)


def unsupervised_segment(source, k=DEFAULT_K, min_size=0):
    """Partition an image into intensity-coherent regions.

    `k` scales the merge tolerance (larger -> coarser). `min_size > 0` adds
    a final pass merging undersized components into their nearest neighbor,
    as in the classic formulation; 0 leaves the raw merge result.
    """
    arr = source.pixels if isinstance(source, Raster) else np.asarray(source)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    h, w = arr.shape[:2]
    pixels = arr.astype(np.float64)
    edges = _grid_edges(pixels)
    # lexsort: weight primary, then row, col, direction for deterministic ties
    order = np.lexsort((edges[:, 3], edges[:, 2], edges[:, 1], edges[:, 0]))
    edges = edges[order]

    uf = _UnionFind(h * w)
    threshold = np.full(h * w, float(k))
    weights = edges[:, 0]
    pa = edges[:, 4].astype(np.int64)
    pb = edges[:, 5].astype(np.int64)
    for i in range(edges.shape[0]):
        ra, rb = uf.find(pa[i]), uf.find(pb[i])
        if ra == rb:
            continue
        wgt = weights[i]
        if wgt <= threshold[ra] and wgt <= threshold[rb]:
            root = uf.union(ra, rb)
            threshold[root] = wgt + k / uf.size[root]
    if min_size > 0:
        for i in range(edges.shape[0]):
            ra, rb = uf.find(pa[i]), uf.find(pb[i])
            if ra != rb and (uf.size[ra] < min_size or uf.size[rb] < min_size):
                uf.union(ra, rb)
    roots = np.fromiter((uf.find(i) for i in range(h * w)), dtype=np.int64, count=h * w)
    return Partition(compact_labels(roots.reshape(h, w)))
