"""Three-branch evaluation harness.

A task runs on the native LR raster, its bicubic-upsampled version, and the
HR reference. The HR output is the self-supervised target; LR and bicubic
outputs are lifted to the HR grid and scored against it. Per-scene verdicts
accumulate in an append-only NDJSON store, and per-task suitability reports
summarize the pass fraction against the theta threshold.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import DataError
from .metrics import (AgreementScore, agreement_keypoints, agreement_mask,
                      agreement_partition, psnr, ssim)
from .resample import bicubic_resize
from .tasks.outputs import KeypointSet, Partition, SegMask

DEFAULT_THETA = 0.8
DEFAULT_EPSILON_PX = 3.0
AMBIGUOUS_FLOOR = 0.5


class Branch(str, Enum):
    LR = "LR"
    BICUBIC = "BICUBIC"
    HR = "HR"


@dataclass
class BranchResult:
    branch: Branch
    output: object  # TaskOutput on the branch's native grid
    on_hr_grid: object  # TaskOutput lifted to the HR grid


@dataclass
class SceneVerdict:
    scene_id: str
    task: str
    mode: str
    score_lr: AgreementScore
    score_bicubic: AgreementScore
    auto_pass: bool
    human: dict | None = None
    extras: dict = field(default_factory=dict)

    def to_record(self):
        rec = {
            "scene_id": self.scene_id,
            "task": self.task,
            "mode": self.mode,
            "score_lr": {"primary": self.score_lr.primary, **self.score_lr.components},
            "score_bicubic": {"primary": self.score_bicubic.primary,
                              **self.score_bicubic.components},
            "auto_pass": self.auto_pass,
        }
        if self.extras:
            rec["extras"] = self.extras
        if self.human is not None:
            rec["human"] = self.human
        return rec


def lift_to_hr(output, scale, hr_shape):
    """Nearest-neighbor lift of an LR-grid output onto the HR grid.

    Masks and partitions repeat each pixel into an SxS block; keypoint
    coordinates are multiplied by S.
    """
    if isinstance(output, SegMask):
        prob = np.repeat(np.repeat(output.prob, scale, axis=0), scale, axis=1)
        return SegMask(prob[: hr_shape[0], : hr_shape[1]], threshold=output.threshold)
    if isinstance(output, Partition):
        lab = np.repeat(np.repeat(output.labels, scale, axis=0), scale, axis=1)
        return Partition(lab[: hr_shape[0], : hr_shape[1]])
    if isinstance(output, KeypointSet):
        return output.scaled(scale, hr_shape)
    raise DataError(f"cannot lift output of type {type(output).__name__}")


def score_against_target(candidate, target, epsilon_px=DEFAULT_EPSILON_PX):
    if isinstance(target, SegMask):
        return agreement_mask(candidate, target)
    if isinstance(target, KeypointSet):
        return agreement_keypoints(candidate, target, epsilon_px=epsilon_px)
    if isinstance(target, Partition):
        return agreement_partition(candidate, target)
    raise DataError(f"no agreement metric for {type(target).__name__}")


def run_three_branch(scene, task, adapt_mode="none", adapted_models=None,
                     lr_index=0):
    """Task outputs for the LR / BICUBIC / HR branches of one scene.

    `adapted_models` optionally maps Branch -> model (dataset-wise
    adaptation precomputes those); otherwise `adapt_mode` sample_wise adapts
    on each branch's prepared input independently.
    """
    from .adapt import AdaptMode, adapt_model

    mode = AdaptMode(adapt_mode)
    hr = scene.hr_reference
    lr = scene.lr_images[lr_index]
    inputs = {
        Branch.LR: lr,
        Branch.BICUBIC: bicubic_resize(lr, (hr.height, hr.width)),
        Branch.HR: hr,
    }
    results = {}
    for branch, raster in inputs.items():
        prepared = task.prepare(raster)
        model = None
        if getattr(task, "adaptable", False) and mode is not AdaptMode.NONE:
            if adapted_models and branch in adapted_models:
                model = adapted_models[branch]
            elif mode is AdaptMode.SAMPLE_WISE:
                model = adapt_model(task.model, mode, prepared)
            else:
                raise DataError("dataset_wise evaluation needs precomputed adapted_models")
        output = task.run(prepared, model=model)
        if branch is Branch.HR:
            lifted = output
        else:
            lifted = (output if branch is Branch.BICUBIC
                      else lift_to_hr(output, scene.scale_factor, (hr.height, hr.width)))
        results[branch] = BranchResult(branch, output, lifted)
    return results


def _adapt_mode_value(mode):
    from .adapt import AdaptMode

    return AdaptMode(mode).value


def evaluate_scene(scene, task, adapt_mode="none", adapted_models=None,
                   epsilon_px=DEFAULT_EPSILON_PX, lr_index=0,
                   with_image_metrics=False):
    """Run the three branches and score LR/bicubic against the HR target."""
    results = run_three_branch(scene, task, adapt_mode=adapt_mode,
                               adapted_models=adapted_models, lr_index=lr_index)
    target = results[Branch.HR].on_hr_grid
    score_lr = score_against_target(results[Branch.LR].on_hr_grid, target, epsilon_px)
    score_bc = score_against_target(results[Branch.BICUBIC].on_hr_grid, target, epsilon_px)
    extras = {}
    if with_image_metrics:
        hr = scene.hr_reference
        bc = bicubic_resize(scene.lr_images[lr_index], (hr.height, hr.width))
        extras["reference_only"] = {
            "psnr_bicubic_vs_hr": psnr(bc.pixels, hr.pixels,
                                       data_range=max(float(hr.pixels.max()), 1.0)),
            "ssim_bicubic_vs_hr": ssim(bc.pixels, hr.pixels,
                                       data_range=max(float(hr.pixels.max()), 1.0)),
        }
    verdict = SceneVerdict(scene.scene_id, task.task_id, _adapt_mode_value(adapt_mode),
                           score_lr, score_bc,
                           auto_pass=bool(score_bc.primary > score_lr.primary),
                           extras=extras)
    return verdict, results


# ---------------------------------------------------------------------------
# Verdict store (append-only NDJSON)
# ---------------------------------------------------------------------------


class VerdictStore:
    """Newline-delimited JSON records; appends only, never rewrites."""

    def __init__(self, path):
        self.path = Path(path)

    def append(self, verdict):
        rec = verdict.to_record() if isinstance(verdict, SceneVerdict) else dict(verdict)
        with open(self.path, "a") as f:
            f.write(json.dumps(rec, sort_keys=True) + "\n")
        return rec

    def write_meta(self, **fields):
        with open(self.path, "a") as f:
            f.write(json.dumps({"_meta": fields}, sort_keys=True) + "\n")

    def records(self):
        if not self.path.exists():
            return []
        out = []
        with open(self.path) as f:
            for line in f:
                line = line.strip()
                if line:
                    rec = json.loads(line)
                    if "_meta" not in rec:
                        out.append(rec)
        return out

    def auto_records(self, task=None):
        """Latest auto record per (scene, task, mode)."""
        latest = {}
        for rec in self.records():
            if "human" in rec:
                continue
            if task is not None and rec["task"] != task:
                continue
            latest[(rec["scene_id"], rec["task"], rec["mode"])] = rec
        return list(latest.values())

    def human_records(self, task=None):
        return [r for r in self.records()
                if "human" in r and (task is None or r["task"] == task)]

    def record_human_verdict(self, scene_id, task, verdict, annotator,
                             timestamp=None):
        """Append the annotator's direct LR-vs-bicubic judgment.

        One record per existing (scene, task, mode) auto verdict, carrying a
        copy of the auto scores plus the human block. The original records
        stay untouched.
        """
        if verdict not in ("better", "worse", "unclear"):
            raise DataError(f"verdict must be better/worse/unclear, got {verdict!r}")
        matching = [r for r in self.auto_records(task=task) if r["scene_id"] == scene_id]
        if not matching:
            raise DataError(f"scene {scene_id!r} task {task!r} has no evaluation to annotate")
        ts = timestamp or datetime.now(timezone.utc).isoformat()
        written = []
        for rec in sorted(matching, key=lambda r: r["mode"]):
            new = dict(rec)
            new["human"] = {"verdict": verdict, "annotator": annotator, "timestamp": ts,
                            "agrees_with_auto": (verdict == "better") == bool(rec["auto_pass"])}
            written.append(self.append(new))
        return written


# ---------------------------------------------------------------------------
# Suitability aggregation
# ---------------------------------------------------------------------------


def _label(pass_fraction, theta):
    if pass_fraction >= theta:
        return "SUITABLE"
    if pass_fraction >= AMBIGUOUS_FLOOR:
        return "AMBIGUOUS"
    return "UNSUITABLE"


def aggregate_suitability(records, task, theta=DEFAULT_THETA):
    """Dataset-level suitability verdict for one task.

    `records` are auto verdict records (dicts or SceneVerdicts). Pass
    fraction = share with auto_pass; the task label follows theta with the
    [0.5, theta) band reported as AMBIGUOUS. Per-adapt-mode breakdown plus
    the human agreement rate when annotations exist.
    """
    recs = [r.to_record() if isinstance(r, SceneVerdict) else r for r in records]
    auto = [r for r in recs if r.get("task") == task and "human" not in r]
    if not auto:
        raise DataError(f"no verdicts for task {task!r}")
    passes = sum(1 for r in auto if r["auto_pass"])
    fraction = passes / len(auto)
    per_mode = {}
    for mode in sorted({r["mode"] for r in auto}):
        sub = [r for r in auto if r["mode"] == mode]
        frac = sum(1 for r in sub if r["auto_pass"]) / len(sub)
        per_mode[mode] = {"n_scenes": len(sub), "pass_fraction": frac,
                          "label": _label(frac, theta)}
    report = {
        "task": task,
        "n_verdicts": len(auto),
        "pass_fraction": fraction,
        "theta": theta,
        "label": _label(fraction, theta),
        "per_mode": per_mode,
    }
    humans = [r for r in recs if r.get("task") == task and "human" in r]
    if humans:
        agree = sum(1 for r in humans if r["human"].get("agrees_with_auto"))
        report["human"] = {"n_verdicts": len(humans),
                           "agreement_rate": agree / len(humans)}
    return report
