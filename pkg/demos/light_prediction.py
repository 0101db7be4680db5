"""
Predicting the ambient light
============================

LPNet maps a document patch to a 3-vector: the colour of the light falling
on the paper. A few epochs on small patches already get close.
"""

import numpy as np
import torch

from docillum import LPNet, SynthSpec, apply_illumination, synth_clean_document
from docillum.config import LPNetConfig
from docillum.imaging import sample_light
from docillum.lpnet import lpnet_forward, predict_lights, train_lpnet


def labelled(n, seed):
    rng = np.random.default_rng(seed)
    items = []
    for _ in range(n):
        spec = SynthSpec(64, seed=int(rng.integers(2**31)))
        light = sample_light(rng)
        items.append((apply_illumination(synth_clean_document(spec), light, spec, rng), light.astype(np.float32)))
    return items


torch.manual_seed(0)
train, test = labelled(96, 1), labelled(24, 2)

# an untrained network already answers in (-1, 1)
print("untrained:", lpnet_forward(LPNet(4), test[0][0]))

cfg = LPNetConfig(depth=4, epochs=10, batch=16, crop=64, lr=1e-3, lr_final=5e-4, decay_epochs=5)
model, history = train_lpnet(train, cfg, np.random.default_rng(0))
for rec in history[::3]:
    print(f"epoch {rec['epoch']:2d}  loss {rec['loss']:.3f}  lr {rec['lr']:.1e}")

pred = predict_lights(model, [img for img, _ in test])
truth = np.stack([light for _, light in test])
print("held-out mean absolute light error:", float(np.abs(pred - truth).mean()))
