"""
Synthetic documents and illumination
====================================

Clean pages are drawn from a seed; an ambient light and a smooth shading
field turn them into "abnormal" photographs of the same page.
"""

import tempfile
from pathlib import Path

import numpy as np

from docillum.imaging import SynthSpec, apply_illumination, background_mask, synth_clean_document, write_png
from docillum.imaging import sample_light

out = Path(tempfile.mkdtemp(prefix="docillum-demo-"))

# a clean 256x256 page: white paper, text strokes, two figure blocks
spec = SynthSpec(256, seed=3, figure_count=2)
clean = synth_clean_document(spec)
print("value range", clean.min(), clean.max())

# pixels are in [-1, 1]; lights live in the same units
rng = np.random.default_rng(0)
light = sample_light(rng)
degraded = apply_illumination(clean, light, spec, rng)

# the paper background of the degraded page averages to the light
mask = background_mask(clean)
print("light          ", np.round(light, 3))
print("background mean", np.round(degraded[mask].mean(axis=0), 3))

write_png(out / "clean.png", clean)
write_png(out / "degraded.png", degraded)
print("wrote", out)
