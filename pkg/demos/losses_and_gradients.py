"""
Losses and a finite-difference check
====================================

The generator objective is a weighted sum of adversarial, cycle and
identity terms. Autograd gradients agree with central differences.
"""

import numpy as np
import torch

from docillum.losses import LossWeights, adv_disc_loss, adv_gen_loss, total_loss

w = LossWeights(lambda1=10, lambda2=5)
parts = dict(gan_a=1.0, gan_b=1.0, cyc_a=1.0, cyc_b=1.0, id_a=1.0, id_b=1.0)
print("total with all parts = 1:", total_loss(parts, w))

# switching terms off is how the loss ablations are expressed
print("cycle only:", total_loss(parts, LossWeights(10, 5, gan=False, identity=False)))

print("D loss at zero logits:", adv_disc_loss(torch.zeros(4), torch.zeros(4)).item())
print("G loss at zero logit: ", adv_gen_loss(torch.zeros(4)).item())

x = np.random.default_rng(0).normal(size=5)
t = torch.tensor(x, requires_grad=True)
adv_gen_loss(t).backward()
h = 1e-6
fd = np.array([(adv_gen_loss(torch.tensor(x + h * e)).item() - adv_gen_loss(torch.tensor(x - h * e)).item()) / (2 * h)
               for e in np.eye(5)])
print("max |autograd - fd|:", np.abs(t.grad.numpy() - fd).max())
