"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 runtime or numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .imaging import read_png, synth_dataset, write_png
from .losses import TrainingDivergenceError
from .metrics import summarize
from .pipeline import (
    StageError,
    configure_determinism,
    correct_heldout,
    resume_pipeline,
    run_evaluate,
    run_pipeline,
    run_train_lpnet,
)
from .trainer import ResourceError, fit, infer, load_generator

log = logging.getLogger("docillum")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _config(args):
    return load_config(args.config, overrides=args.set or ())


def cmd_synth_data(args) -> int:
    out = Path(args.out)
    if out.exists() and any(out.iterdir()):
        if not args.force:
            raise ConfigError(f"{out} is not empty; pass --force to overwrite")
        shutil.rmtree(out)
    path = synth_dataset(out, args.count, args.size, args.seed, args.heldout)
    print(path)
    return EXIT_OK


def cmd_train_lpnet(args) -> int:
    cfg = _config(args)
    manifest = args.manifest or cfg.data.manifest
    if not manifest:
        raise ConfigError("train-lpnet needs --manifest or data.manifest")
    out = Path(args.out) if args.out else Path(cfg.run_dir) / "lpnet" / "lpnet.pt"
    print(run_train_lpnet(cfg, manifest, out.parent, out.name))
    return EXIT_OK


def cmd_train_gan(args) -> int:
    cfg = _config(args)
    manifest = args.manifest or cfg.data.manifest
    if not manifest:
        raise ConfigError("train-gan needs --manifest or data.manifest")
    for p in fit(cfg, manifest, Path(cfg.run_dir) / "gan", resume=args.resume, stop_after_epoch=args.stop_after):
        print(p)
    return EXIT_OK


def cmd_infer(args) -> int:
    g = load_generator(args.checkpoint)
    write_png(args.output, infer(g, read_png(args.input)))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    eval_manifest = args.manifest
    if args.checkpoint:
        # correct a dataset's held-out pool first, then score it
        eval_manifest = correct_heldout(args.checkpoint, args.manifest, args.out)
    report = run_evaluate(eval_manifest, args.out, None if args.area == 0 else args.area, args.ocr_command)
    print(summarize(report))
    if args.json:
        print(json.dumps(report["mean"]))
    return EXIT_OK


def cmd_pipeline(args) -> int:
    if args.resume:
        exp = resume_pipeline(args.resume)
    else:
        if not args.config:
            raise ConfigError("pipeline needs --config or --resume")
        exp = run_pipeline(_config(args))
    print(Path(exp.reports[0]).parent if exp.reports else exp.run_id)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="docillum", description="Light-guided unpaired document illumination correction")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp, required=True):
        sp.add_argument("--config", required=required, help="YAML config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config key, e.g. --set loss.lambda1=5 (repeatable)")

    sp = sub.add_parser("synth-data", help="write synthetic abnormal/normal/held-out pools")
    sp.add_argument("--out", required=True)
    sp.add_argument("--count", type=int, default=200)
    sp.add_argument("--size", type=int, default=256)
    sp.add_argument("--seed", type=int, default=7)
    sp.add_argument("--heldout", type=int, default=None)
    sp.add_argument("--force", action="store_true")
    sp.set_defaults(func=cmd_synth_data)

    sp = sub.add_parser("train-lpnet", help="train the light prediction network")
    with_config(sp)
    sp.add_argument("--manifest")
    sp.add_argument("--out", help="checkpoint path (default: <run_dir>/lpnet/lpnet.pt)")
    sp.set_defaults(func=cmd_train_lpnet)

    sp = sub.add_parser("train-gan", help="train the translation networks")
    with_config(sp)
    sp.add_argument("--manifest")
    sp.add_argument("--resume", action="store_true")
    sp.add_argument("--stop-after", type=int, metavar="EPOCH",
                    help="pause after this many epochs (checkpoint written); continue with --resume")
    sp.set_defaults(func=cmd_train_gan)

    sp = sub.add_parser("infer", help="correct one PNG of any size")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--input", required=True)
    sp.add_argument("--output", required=True)
    sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("evaluate", help="MS-SSIM / ED / CER report")
    sp.add_argument("--manifest", required=True,
                    help="evaluation manifest, or a dataset manifest when --checkpoint is given")
    sp.add_argument("--checkpoint", help="correct the dataset's held-out pool with this checkpoint first")
    sp.add_argument("--out", required=True)
    sp.add_argument("--area", type=int, default=598400, help="resize area before MS-SSIM (0 disables)")
    sp.add_argument("--ocr-command", help="OCR command template, e.g. 'tesseract {image} stdout'")
    sp.add_argument("--json", action="store_true", help="also print the mean row as JSON")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("pipeline", help="synth-data/train-lpnet/train-gan/evaluate in one run")
    with_config(sp, required=False)
    sp.add_argument("--resume", metavar="RUN_DIR", help="continue an interrupted run")
    sp.set_defaults(func=cmd_pipeline)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    configure_determinism()
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except StageError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG if isinstance(exc.cause, ConfigError) else EXIT_RUNTIME
    except (TrainingDivergenceError, ResourceError, FloatingPointError) as exc:
        log.error("runtime failure: %s", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
