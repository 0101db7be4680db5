"""Experiment orchestration: data -> light network -> translation model -> evaluation."""
from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .config import Config, ConfigError, dump_config, load_config
from .imaging import load_pool, read_manifest, read_png, synth_dataset, write_png
from .lpnet import save_lpnet, train_lpnet
from .metrics import EvalItem, evaluate_items, read_eval_manifest, summarize, write_eval_manifest, write_report
from .trainer import fit, infer, latest_checkpoint, load_generator

log = logging.getLogger(__name__)

EXPERIMENT_SCHEMA = "docillum.experiment/1"
DETERMINISTIC_ENV = "DOCILLUM_DETERMINISTIC"


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {cause}")


def configure_determinism() -> bool:
    """Honour ``DOCILLUM_DETERMINISTIC=1``: one thread, deterministic kernels."""
    if os.environ.get(DETERMINISTIC_ENV, "0") not in ("", "0", "false", "False"):
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)
        return True
    return False


@dataclass
class ExperimentManifest:
    run_id: str
    config: dict
    config_hash: str
    dataset_manifest: Optional[str] = None
    lpnet_checkpoint: Optional[str] = None
    checkpoints: list = field(default_factory=list)
    reports: list = field(default_factory=list)
    stages: dict = field(default_factory=dict)

    def save(self, run_dir) -> Path:
        path = Path(run_dir) / "experiment.json"
        path.write_text(json.dumps({"schema": EXPERIMENT_SCHEMA, **vars(self)}, indent=1) + "\n")
        return path

    @classmethod
    def load(cls, run_dir) -> "ExperimentManifest":
        doc = json.loads((Path(run_dir) / "experiment.json").read_text())
        doc.pop("schema", None)
        return cls(**doc)


def prepare_data(cfg: Config, run_dir) -> Path:
    if cfg.data.manifest:
        path = Path(cfg.data.manifest)
        if not path.exists():
            raise ConfigError(f"data.manifest not found: {path}")
        return path
    data_dir = Path(run_dir) / "data"
    existing = data_dir / "manifest.json"
    if existing.exists():
        return existing
    d = cfg.data
    return synth_dataset(data_dir, d.count, d.size, d.seed, d.heldout)


def run_train_lpnet(cfg: Config, manifest_path, out_dir, name: str = "lpnet.pt") -> Path:
    """Train the light network on the labelled abnormal pool and save it."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = read_manifest(manifest_path)
    images, lights = load_pool(manifest, "abnormal")
    dataset = [(img, light) for img, light in zip(images, lights) if light is not None]
    torch.manual_seed(cfg.seed)
    model, history = train_lpnet(dataset, cfg.lpnet, np.random.default_rng(cfg.seed))
    path = out_dir / name
    save_lpnet(model, path)
    with (out_dir / "lpnet_log.jsonl").open("w") as fh:
        for rec in history:
            fh.write(json.dumps(rec) + "\n")
    return path


def correct_heldout(checkpoint, manifest_path, out_dir) -> Path:
    """Correct every held-out degraded image; returns an evaluation manifest."""
    out_dir = Path(out_dir)
    (out_dir / "corrected").mkdir(parents=True, exist_ok=True)
    manifest = read_manifest(manifest_path)
    g = load_generator(checkpoint)
    items = []
    for e in manifest.pool("heldout-paired"):
        src = manifest.resolve(e.path)
        dst = out_dir / "corrected" / Path(e.path).name
        write_png(dst, infer(g, read_png(src)))
        items.append(EvalItem(
            corrected=os.path.relpath(dst, out_dir),
            ground_truth=os.path.relpath(manifest.resolve(e.clean), out_dir) if e.clean else None,
            degraded=os.path.relpath(src, out_dir),
        ))
    path = out_dir / "eval_manifest.json"
    write_eval_manifest(path, items)
    return path


def run_evaluate(eval_manifest, out_dir, area: Optional[int], ocr_command: Optional[str] = None) -> dict:
    items, root = read_eval_manifest(eval_manifest)
    report = evaluate_items(items, root=root, area=area, ocr_command=ocr_command)
    write_report(report, out_dir)
    log.info("evaluation: %s", summarize(report))
    return report


def _stage(exp: ExperimentManifest, run_dir, name: str, fn):
    t0 = time.time()
    log.info("stage %s started", name)
    try:
        result = fn()
    except ConfigError:
        exp.stages[name] = "failed"
        exp.save(run_dir)
        raise
    except Exception as exc:
        exp.stages[name] = "failed"
        exp.save(run_dir)
        raise StageError(name, exc) from exc
    exp.stages[name] = f"done in {time.time() - t0:.1f}s"
    exp.save(run_dir)
    return result


def run_pipeline(cfg: Config, resume: bool = False) -> ExperimentManifest:
    """Data preparation, LPNet training, translation training and evaluation in order.

    With ``resume`` every finished stage is reused and translation training
    continues from its newest checkpoint.
    """
    run_dir = Path(cfg.run_dir)
    if run_dir.exists() and any(run_dir.iterdir()) and not resume:
        if (run_dir / "experiment.json").exists():
            raise ConfigError(f"{run_dir} already holds a run; pass resume to continue it")
    run_dir.mkdir(parents=True, exist_ok=True)
    lp_path = run_dir / "lpnet" / "lpnet.pt"
    if cfg.lpnet.depth > 0 and not cfg.train.lpnet_checkpoint:
        # fixed before hashing so the snapshot and checkpoints agree
        cfg.train.lpnet_checkpoint = str(lp_path)
    dump_config(cfg, run_dir / "config.yaml")
    exp = ExperimentManifest(run_id=run_dir.name, config=cfg.to_dict(), config_hash=cfg.hash())
    if resume and (run_dir / "experiment.json").exists():
        prev = ExperimentManifest.load(run_dir)
        if prev.config_hash != exp.config_hash:
            raise ConfigError(f"config hash {exp.config_hash} differs from the run's {prev.config_hash}")
        exp = prev

    manifest_path = _stage(exp, run_dir, "data", lambda: prepare_data(cfg, run_dir))
    exp.dataset_manifest = str(manifest_path)

    if cfg.lpnet.depth > 0:
        own = Path(cfg.train.lpnet_checkpoint) == lp_path
        lp_path = Path(cfg.train.lpnet_checkpoint)
        if not own and not lp_path.exists():
            raise ConfigError(f"train.lpnet_checkpoint not found: {lp_path}")
        # a checkpoint supplied from outside the run is reused as is
        if own and not (resume and lp_path.exists()):
            _stage(exp, run_dir, "train-lpnet",
                   lambda: run_train_lpnet(cfg, manifest_path, lp_path.parent, lp_path.name))
        exp.lpnet_checkpoint = str(lp_path)

    gan_dir = run_dir / "gan"
    can_resume = resume and latest_checkpoint(gan_dir / "checkpoints") is not None
    written = _stage(exp, run_dir, "train-gan",
                     lambda: fit(cfg, manifest_path, gan_dir, resume=can_resume))
    exp.checkpoints = sorted({*exp.checkpoints, *map(str, written)})
    final = latest_checkpoint(gan_dir / "checkpoints")

    def evaluate():
        eval_manifest = correct_heldout(final, manifest_path, run_dir / "eval")
        return run_evaluate(eval_manifest, run_dir / "eval", cfg.eval.area, cfg.eval.ocr_command)

    _stage(exp, run_dir, "evaluate", evaluate)
    exp.reports = [str(run_dir / "eval" / "report.json"), str(run_dir / "eval" / "report.csv")]
    exp.save(run_dir)
    return exp


def resume_pipeline(run_dir) -> ExperimentManifest:
    return run_pipeline(load_config(Path(run_dir) / "config.yaml"), resume=True)
