"""Command-line entry points.

    srtask synth      --config c.json --out corpus/   generate a corpus
    srtask train-task --config c.json --out run/      train a segmentation model
    srtask adapt      --config c.json --out run/      recalibrate batch norm
    srtask eval       --config c.json --out run/      three-branch evaluation
    srtask verdict    --out run/ --scene s --task t --verdict better --annotator a
    srtask train-sr   --config c.json --out run/      task-driven SR training
    srtask report     --config c.json --out run/      aggregate + panels

Exit codes: 0 success, 1 usage error, 2 data error. Global flags: --seed,
--config, --out, --json-logs. Every artifact embeds the config hash and seed.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields as dataclass_fields
from dataclasses import replace
from pathlib import Path

import numpy as np

from .adapt import AdaptMode, adapt_model
from .config import config_hash, load_run_config
from .errors import DataError, SrtaskError
from .evaluate import Branch, VerdictStore, aggregate_suitability, evaluate_scene
from .panels import render_panel
from .resample import bicubic_resize
from .scene_store import load_manifest, load_scene
from .synth import SynthSpec, generate_corpus, seg_corpus_from_manifest
from .tasks import SegTrainConfig, make_task, segmentation_train
from .tasks.segmentation import (load_segmentation_model, save_segmentation_model)
from .train_sr import (LossWeights, SRModel, SRNet, SRTrainConfig, save_sr_model,
                       train_task_driven, write_training_log)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


def _emit(args, event, **fields):
    if getattr(args, "json_logs", False):
        print(json.dumps({"event": event, **fields}, sort_keys=True))
    else:
        detail = " ".join(f"{k}={v}" for k, v in fields.items())
        print(f"[{event}] {detail}".rstrip())


def _write_json(path, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def _stamp(cfg):
    return {"config_hash": config_hash(cfg), "seed": cfg.seed}


def _filter_kwargs(cls, raw):
    names = {f.name for f in dataclass_fields(cls)}
    return {k: v for k, v in raw.items() if k in names}


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args):
    cfg = load_run_config(args.config, {"seed": args.seed})
    block = cfg.get("synth", {})
    spec_kwargs = _filter_kwargs(SynthSpec, block.get("spec", {}))
    for key in ("bands", "n_roads", "road_width", "n_buildings", "building_size"):
        if key in spec_kwargs and isinstance(spec_kwargs[key], list):
            spec_kwargs[key] = tuple(spec_kwargs[key])
    spec = SynthSpec(**{**spec_kwargs, "seed": cfg.seed})
    n_scenes = args.scenes or int(block.get("n_scenes", 20))
    domain = args.domain or block.get("domain", "A")
    root = Path(args.out)
    manifest = generate_corpus(spec, n_scenes, root, domain=domain,
                               split_fractions=tuple(block.get("split_fractions",
                                                               (0.6, 0.2, 0.2))))
    _write_json(root / "synth_summary.json",
                {**_stamp(cfg), "n_scenes": n_scenes, "domain": domain,
                 "scenes": manifest.scene_ids, "splits": manifest.splits})
    _emit(args, "synth.done", root=str(root), scenes=n_scenes, domain=domain)
    return EXIT_OK


def cmd_train_task(args):
    cfg = load_run_config(args.config, {"seed": args.seed}).validate(need_dataset=True)
    block = cfg.get("train_task", {})
    bands = tuple(block.get("bands", ["B08"]))
    target = block.get("target", "roads")
    corpus = seg_corpus_from_manifest(cfg.dataset, block.get("split", "train"),
                                      target=target, bands=bands)
    val = None
    if block.get("val_split", "val"):
        try:
            val = seg_corpus_from_manifest(cfg.dataset, block["val_split"]
                                           if "val_split" in block else "val",
                                           target=target, bands=bands).samples
        except DataError:
            val = None
    train_cfg = SegTrainConfig(**_filter_kwargs(SegTrainConfig, block),
                               seed=cfg.seed)
    _emit(args, "train_task.start", samples=len(corpus.samples), target=target)
    model = segmentation_train(corpus, train_cfg, val_samples=val, bands=bands)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    weights_path = out / "task_model.wgt"
    save_segmentation_model(weights_path, model)
    _write_json(out / "task_model.json", {
        **_stamp(cfg),
        "kind": "segmentation",
        "arch": {"depth": model.net.depth, "width": model.net.width,
                 "bands": list(bands)},
        "weights_path": weights_path.name,
        "training_gsd": model.training_gsd,
    })
    _emit(args, "train_task.done", weights=str(weights_path))
    return EXIT_OK


def _branch_inputs(scene, branch):
    hr = scene.hr_reference
    if branch is Branch.HR:
        return hr
    if branch is Branch.LR:
        return scene.reference_lr
    return bicubic_resize(scene.reference_lr, (hr.height, hr.width))


def cmd_adapt(args):
    cfg = load_run_config(args.config, {"seed": args.seed}).validate(need_dataset=True)
    block = cfg.get("adapt", {})
    model_path = cfg.resolve_path(block.get("model") or (cfg.tasks or [{}])[0].get("model"))
    model = load_segmentation_model(model_path)
    mode = AdaptMode(block.get("mode", "dataset_wise"))
    branch = Branch(block.get("branch", "HR"))
    manifest = load_manifest(cfg.dataset)
    ids = manifest.split(block.get("split", "train")) or manifest.scene_ids
    from .tasks import SegmentationTask

    task = SegmentationTask(model)
    images = [task.prepare(_branch_inputs(load_scene(cfg.dataset, sid), branch))
              for sid in ids]
    if mode is AdaptMode.SAMPLE_WISE:
        adapted = adapt_model(model, mode, images[0])
    else:
        adapted = adapt_model(model, mode, images)
    adapted.adaptation = {**(adapted.adaptation or {}),
                          "stats_source": f"{cfg.dataset.name}:{branch.value}"}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"task_model_{mode.value}.wgt"
    save_segmentation_model(path, adapted)
    _write_json(out / f"adapt_{mode.value}.json",
                {**_stamp(cfg), "mode": mode.value, "branch": branch.value,
                 "n_images": len(images), "weights": path.name})
    _emit(args, "adapt.done", mode=mode.value, weights=str(path))
    return EXIT_OK


def _resolve_tasks(cfg):
    tasks = []
    for spec in cfg.tasks:
        spec = dict(spec)
        if isinstance(spec.get("model"), str):
            spec["model"] = str(cfg.resolve_path(spec["model"]))
        if isinstance(spec.get("descriptor"), str):
            spec["descriptor"] = str(cfg.resolve_path(spec["descriptor"]))
        tasks.append(make_task(spec))
    if not tasks:
        raise DataError("config declares no tasks")
    return tasks


def run_eval(cfg, out, emit=lambda *a, **k: None):
    """Three-branch evaluation over a manifest; returns the metrics payload."""
    np.random.seed(cfg.seed)
    manifest = load_manifest(cfg.dataset)
    ids = manifest.split(cfg.get("split", "test")) or manifest.scene_ids
    thresholds = cfg.thresholds
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    store = VerdictStore(out / "verdicts.ndjson")
    if store.path.exists():
        store.path.unlink()
    store.write_meta(**_stamp(cfg))
    scenes = [load_scene(cfg.dataset, sid) for sid in ids]
    tasks = _resolve_tasks(cfg)
    for task in tasks:
        for mode_name in cfg.adapt_modes:
            mode = AdaptMode(mode_name)
            adapted_models = None
            if mode is AdaptMode.DATASET_WISE and getattr(task, "adaptable", False):
                adapted_models = {}
                for branch in Branch:
                    pool = [task.prepare(_branch_inputs(s, branch)) for s in scenes]
                    adapted_models[branch] = adapt_model(task.model, mode, pool)
            for scene in scenes:
                verdict, _ = evaluate_scene(
                    scene, task, adapt_mode=mode, adapted_models=adapted_models,
                    epsilon_px=thresholds["epsilon_px"],
                    with_image_metrics=bool(cfg.get("image_metrics", False)))
                store.append(verdict)
                emit("eval.scene", scene=scene.scene_id, task=task.task_id,
                     mode=mode.value, auto_pass=verdict.auto_pass)
    reports = {}
    for task in tasks:
        reports[task.task_id] = aggregate_suitability(
            store.auto_records(task=task.task_id), task.task_id,
            theta=thresholds["theta"])
    payload = {**_stamp(cfg), "n_scenes": len(scenes), "tasks": reports}
    _write_json(out / "metrics.json", payload)
    return payload


def cmd_eval(args):
    cfg = load_run_config(args.config, {"seed": args.seed}).validate(need_dataset=True)
    payload = run_eval(cfg, args.out, emit=lambda e, **f: _emit(args, e, **f))
    for task_id, report in payload["tasks"].items():
        _emit(args, "eval.report", task=task_id, label=report["label"],
              pass_fraction=round(report["pass_fraction"], 4))
    return EXIT_OK


def cmd_verdict(args):
    store = VerdictStore(Path(args.out) / "verdicts.ndjson")
    if not store.path.exists():
        raise DataError(f"no verdict store at {store.path}; run `srtask eval` first")
    written = store.record_human_verdict(args.scene, args.task, args.verdict,
                                         args.annotator)
    _emit(args, "verdict.recorded", scene=args.scene, task=args.task,
          verdict=args.verdict, records=len(written))
    return EXIT_OK


def cmd_train_sr(args):
    cfg = load_run_config(args.config, {"seed": args.seed}).validate(need_dataset=True)
    sr_cfg = cfg.sr
    block = cfg.get("train_sr", {})
    bands = tuple(block.get("bands", ["B08"]))
    manifest = load_manifest(cfg.dataset)
    task_model = None
    w = sr_cfg["weights"]
    weights = LossWeights(alpha=w["alpha"], beta=w["beta"], gamma=w["gamma"],
                          image_norm=sr_cfg.get("image_norm", "L1"),
                          task_space=sr_cfg.get("space", "output"))
    model_path = block.get("task_model") or (cfg.tasks or [{}])[0].get("model")
    if model_path:
        task_model = load_segmentation_model(cfg.resolve_path(model_path))
    elif weights.beta > 0:
        raise DataError("train-sr with beta > 0 needs a task model")

    def pairs_for(split):
        out = []
        for sid in manifest.split(split) or []:
            scene = load_scene(cfg.dataset, sid)
            out.append((scene.reference_lr.select_bands(bands),
                        scene.hr_reference.select_bands(bands)))
        return out

    train_pairs = pairs_for(block.get("split", "train"))
    val_pairs = pairs_for(block.get("val_split", "val")) or None
    if not train_pairs:
        raise DataError("train split is empty")
    scale = load_scene(cfg.dataset, manifest.scene_ids[0]).scale_factor
    torch_seed = cfg.seed
    arch = block.get("arch", {})
    import torch

    torch.manual_seed(torch_seed)
    net = SRNet(in_channels=len(bands), scale=scale,
                blocks=int(arch.get("blocks", 8)), width=int(arch.get("width", 32)))
    sr_model = SRModel(net, bands)
    train_cfg = SRTrainConfig(**_filter_kwargs(SRTrainConfig, block), seed=cfg.seed)
    task_channels = None
    if task_model is not None and task_model.bands:
        if set(task_model.bands) - set(bands):
            raise DataError(f"task bands {task_model.bands} not in SR bands {bands}")
        if task_model.bands != bands:
            task_channels = [bands.index(b) for b in task_model.bands]
    _emit(args, "train_sr.start", pairs=len(train_pairs), weights=str(w))
    sr_model, log = train_task_driven(sr_model, train_pairs, task_model, weights,
                                      config=train_cfg, task_channels=task_channels,
                                      val_pairs=val_pairs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_sr_model(out / "sr_model.wgt", sr_model)
    write_training_log(out / "training_log.csv", log)
    _write_json(out / "train_sr_summary.json",
                {**_stamp(cfg), "epochs": len(log),
                 "final": log[-1] if log else None,
                 "weights": {"alpha": weights.alpha, "beta": weights.beta,
                             "gamma": weights.gamma},
                 "task_space": weights.task_space})
    _emit(args, "train_sr.done", model=str(out / "sr_model.wgt"))
    return EXIT_OK


def cmd_report(args):
    cfg = load_run_config(args.config, {"seed": args.seed})
    out = Path(args.out)
    store = VerdictStore(out / "verdicts.ndjson")
    records = store.records()
    if not records:
        raise DataError(f"no verdicts under {out}; run `srtask eval` first")
    theta = cfg.thresholds["theta"]
    task_ids = sorted({r["task"] for r in records})
    reports = {}
    for task_id in task_ids:
        reports[task_id] = aggregate_suitability(
            store.auto_records(task=task_id) + store.human_records(task=task_id),
            task_id, theta=theta)
    payload = {**_stamp(cfg), "tasks": reports}
    _write_json(out / "metrics.json", payload)
    n_panels = args.panels
    if n_panels > 0 and cfg.get("dataset") and cfg.tasks:
        cfg.validate(need_dataset=True)
        manifest = load_manifest(cfg.dataset)
        ids = (manifest.split(cfg.get("split", "test")) or manifest.scene_ids)[:n_panels]
        tasks = _resolve_tasks(cfg)
        from .evaluate import run_three_branch

        for task in tasks:
            for sid in ids:
                scene = load_scene(cfg.dataset, sid)
                results = run_three_branch(scene, task, adapt_mode="none")
                render_panel(scene, results,
                             out / "panels" / f"{task.task_id}_{sid}.png",
                             annotations=f"{task.task_id} {sid}")
        _emit(args, "report.panels", count=len(ids) * len(tasks))
    for task_id, report in reports.items():
        _emit(args, "report.task", task=task_id, label=report["label"],
              pass_fraction=round(report["pass_fraction"], 4))
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser / dispatch
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--config", default=None, help="JSON run config")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--json-logs", action="store_true",
                        help="machine-readable progress on stdout")
    parser = _Parser(prog="srtask",
                     description="Task-driven SR evaluation and training harness")
    sub = parser.add_subparsers(dest="command")
    p = sub.add_parser("synth", parents=[common], help="generate a synthetic corpus")
    p.add_argument("--scenes", type=int, default=None)
    p.add_argument("--domain", choices=("A", "B"), default=None)
    p.set_defaults(func=cmd_synth)
    p = sub.add_parser("train-task", parents=[common], help="train a segmentation task model")
    p.set_defaults(func=cmd_train_task)
    p = sub.add_parser("adapt", parents=[common], help="batch-norm recalibration")
    p.set_defaults(func=cmd_adapt)
    p = sub.add_parser("eval", parents=[common], help="three-branch evaluation")
    p.set_defaults(func=cmd_eval)
    p = sub.add_parser("verdict", parents=[common], help="record a human verdict")
    p.add_argument("--scene", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--verdict", required=True, choices=("better", "worse", "unclear"))
    p.add_argument("--annotator", required=True)
    p.set_defaults(func=cmd_verdict)
    p = sub.add_parser("train-sr", parents=[common], help="task-driven SR training")
    p.set_defaults(func=cmd_train_sr)
    p = sub.add_parser("report", parents=[common], help="aggregate verdicts + panels")
    p.add_argument("--panels", type=int, default=0, help="render panels for N scenes")
    p.set_defaults(func=cmd_report)
    return parser


def cli_dispatch(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    if not getattr(args, "command", None):
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except SrtaskError as e:
        if getattr(args, "json_logs", False):
            print(json.dumps({"event": "error", "error": str(e)}, sort_keys=True),
                  file=sys.stderr)
        else:
            print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


def main(argv=None):
    return cli_dispatch(argv)


if __name__ == "__main__":
    sys.exit(main())
