"""Run configuration: JSON schema, validation, hashing.

Schema (all blocks optional unless a subcommand needs them):

    {"dataset": "path", "split": "test",
     "tasks": [{"kind": "segmentation", "model": "task_model.wgt",
                "bands": ["B08"]}],
     "adapt_modes": ["none", "sample_wise", "dataset_wise"],
     "thresholds": {"theta": 0.8, "epsilon_px": 3.0, "mask": 0.5},
     "sr": {"weights": {"alpha": 1.0, "beta": 0.1, "gamma": 0.1},
            "space": "output"},
     "seed": 0}

`SRTASK_DATA_ROOT` is the dataset-root fallback when the config omits it.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

from .errors import DataError

ENV_DATA_ROOT = "SRTASK_DATA_ROOT"

DEFAULT_THRESHOLDS = {"theta": 0.8, "epsilon_px": 3.0, "mask": 0.5}
DEFAULT_SR = {"weights": {"alpha": 1.0, "beta": 0.1, "gamma": 0.1}, "space": "output"}


@dataclass
class RunConfig:
    raw: dict
    path: Path | None = None

    @property
    def seed(self):
        return int(self.raw.get("seed", 0))

    @property
    def dataset(self):
        ds = self.raw.get("dataset") or os.environ.get(ENV_DATA_ROOT)
        if not ds:
            raise DataError(f"no dataset root: set `dataset` in the config or {ENV_DATA_ROOT}")
        return Path(ds)

    @property
    def thresholds(self):
        return {**DEFAULT_THRESHOLDS, **self.raw.get("thresholds", {})}

    @property
    def sr(self):
        base = self.raw.get("sr", {})
        weights = {**DEFAULT_SR["weights"], **base.get("weights", {})}
        return {**DEFAULT_SR, **base, "weights": weights}

    @property
    def tasks(self):
        return list(self.raw.get("tasks", []))

    @property
    def adapt_modes(self):
        return list(self.raw.get("adapt_modes", ["none"]))

    def get(self, key, default=None):
        return self.raw.get(key, default)

    def resolve_path(self, value):
        """Paths in a config file resolve relative to the file's directory."""
        p = Path(value)
        if not p.is_absolute() and self.path is not None:
            p = self.path.parent / p
        return p

    def validate(self, need_dataset=False):
        if need_dataset and not self.dataset.exists():
            raise DataError(f"dataset root does not exist: {self.dataset}")
        for t in self.tasks:
            model = t.get("model")
            if model and not self.resolve_path(model).exists():
                raise DataError(f"task model not found: {model}")
        return self


def load_run_config(path=None, overrides=None):
    raw = {}
    cfg_path = None
    if path:
        cfg_path = Path(path)
        if not cfg_path.exists():
            raise DataError(f"config file not found: {cfg_path}")
        raw = json.loads(cfg_path.read_text())
    if overrides:
        raw = {**raw, **{k: v for k, v in overrides.items() if v is not None}}
    return RunConfig(raw, path=cfg_path)


def config_hash(config):
    """sha256 of the canonical config JSON (output directory excluded, so a
    rerun into a different directory hashes identically)."""
    raw = config.raw if isinstance(config, RunConfig) else dict(config)
    raw = {k: v for k, v in raw.items() if k != "out"}
    blob = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
