"""Native serialized tensor container.

Layout: magic, 8-byte little-endian header length, JSON header, then the
concatenated little-endian tensor payloads. The header carries free-form
`meta` plus a tensor index (name, dtype, shape, offset). Batch-norm entries
use the `.bn.gamma` / `.bn.beta` / `.bn.running_mean` / `.bn.running_var`
naming regardless of the in-memory framework convention.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = b"SRTWGT1\n"

_DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8"}


def save_tensors(path, tensors, meta=None):
    """Write named arrays plus a JSON meta block."""
    path = Path(path)
    index = []
    payloads = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        dtype = str(arr.dtype)
        if dtype not in _DTYPES:
            raise DataError(f"unsupported tensor dtype {dtype} for {name!r}")
        blob = np.ascontiguousarray(arr, dtype=_DTYPES[dtype]).tobytes()
        index.append({"name": name, "dtype": dtype, "shape": list(arr.shape),
                      "offset": offset})
        payloads.append(blob)
        offset += len(blob)
    header = json.dumps({"meta": meta or {}, "tensors": index}, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(len(header).to_bytes(8, "little"))
        f.write(header)
        for blob in payloads:
            f.write(blob)


def load_tensors(path):
    """Read back (tensors dict, meta dict)."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"weights file not found: {path}")
    with open(path, "rb") as f:
        if f.read(len(MAGIC)) != MAGIC:
            raise DataError(f"{path}: not a srtask weights container")
        n = int.from_bytes(f.read(8), "little")
        header = json.loads(f.read(n).decode())
        body = f.read()
    tensors = {}
    for entry in header["tensors"]:
        dt = np.dtype(_DTYPES[entry["dtype"]])
        count = int(np.prod(entry["shape"], dtype=np.int64)) if entry["shape"] else 1
        start = entry["offset"]
        arr = np.frombuffer(body, dtype=dt, count=count, offset=start)
        tensors[entry["name"]] = arr.reshape(entry["shape"]).astype(entry["dtype"])
    return tensors, header.get("meta", {})


def state_dict_to_tensors(state_dict, bn_paths):
    """Flatten a torch state dict to container names.

    For module paths in `bn_paths`, `weight`/`bias` become `gamma`/`beta` and
    `num_batches_tracked` is dropped (recomputable bookkeeping).
    """
    out = {}
    for key, tensor in state_dict.items():
        path, _, leaf = key.rpartition(".")
        if path in bn_paths:
            if leaf == "num_batches_tracked":
                continue
            leaf = {"weight": "gamma", "bias": "beta"}.get(leaf, leaf)
        out[f"{path}.{leaf}" if path else leaf] = tensor.detach().cpu().numpy()
    return out


def tensors_to_state_dict(tensors, bn_paths):
    """Inverse of state_dict_to_tensors (num_batches_tracked reset to 0)."""
    import torch

    out = {}
    for name, arr in tensors.items():
        path, _, leaf = name.rpartition(".")
        if path in bn_paths:
            leaf = {"gamma": "weight", "beta": "bias"}.get(leaf, leaf)
        out[f"{path}.{leaf}" if path else leaf] = torch.from_numpy(np.array(arr))
    for path in bn_paths:
        out[f"{path}.num_batches_tracked"] = torch.tensor(0, dtype=torch.int64)
    return out
