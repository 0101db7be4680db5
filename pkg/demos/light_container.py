"""
The light container
===================

Predicted lights are pushed into a bounded FIFO; during training the
normal-to-abnormal generator is conditioned on lights drawn from it.
"""

import numpy as np

from docillum import LightContainer
from docillum.lightstore import default_capacity

# capacity defaults to a quarter of the abnormal pool
print("2700 images ->", default_capacity(2700), "slots")

c = LightContainer(3)
for v in (0.1, 0.2, 0.3, 0.4):
    c.push(np.full(3, v, np.float32))
# the oldest entry was evicted
print([round(float(x[0]), 1) for x in c.items])

rng = np.random.default_rng(0)
draws = [round(float(c.sample_random(rng)[0]), 1) for _ in range(3000)]
print({v: draws.count(v) for v in sorted(set(draws))})
