"""
Training the translation model end to end
=========================================

A deliberately tiny run: synthetic pools, a short LPNet fit, a few GAN
epochs, then whole-image correction. For the real toy experiment use
``docillum pipeline --config configs/toy.yaml``.
"""

import tempfile
from pathlib import Path

from docillum.config import load_config
from docillum.imaging import read_manifest, read_png
from docillum.metrics import ms_ssim
from docillum.pipeline import run_pipeline
from docillum.trainer import infer, latest_checkpoint, load_generator, read_log

root = Path(__file__).resolve().parents[1]
run = Path(tempfile.mkdtemp(prefix="docillum-demo-")) / "run"

cfg = load_config(root / "configs" / "toy.yaml", [
    f"run_dir={run}", "data.count=24", "data.size=64", "data.heldout=4",
    "lpnet.epochs=3", "lpnet.decay_epochs=1", "train.epochs=4",
    "train.constant_epochs=2", "train.decay_epochs=2", "train.checkpoint_every=2",
])
exp = run_pipeline(cfg)
print("stages:", exp.stages)

for rec in read_log(run / "gan" / "train_log.jsonl"):
    print(f"epoch {rec['epoch']}  total {rec['total']:.3f}  d_n {rec['d_n']:.3f}  lr_g {rec['lr_g']:.1e}")

g = load_generator(latest_checkpoint(run / "gan" / "checkpoints"))
manifest = read_manifest(run / "data" / "manifest.json")
item = manifest.pool("heldout-paired")[0]
degraded, clean = read_png(manifest.resolve(item.path)), read_png(manifest.resolve(item.clean))
corrected = infer(g, degraded)
# four epochs only exercise the plumbing; the toy config needs about fifty to help
print("MS-SSIM degraded", round(ms_ssim(degraded, clean), 4), "corrected", round(ms_ssim(corrected, clean), 4))
