"""Generators and patch discriminators of the light-guided translation model."""
from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .tensors import pad_to_multiple, to_image, to_tensor

UNET_DEPTH = 4
DISC_LAYERS = 4


def init_weights(module: nn.Module) -> None:
    """N(0, 0.02) conv weights, N(1, 0.02) batch-norm scales, zero biases."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            nn.init.normal_(m.weight, 0.0, 0.02)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.normal_(m.weight, 1.0, 0.02)
            nn.init.zeros_(m.bias)


def _down(cin, cout, norm=True):
    layers = [nn.Conv2d(cin, cout, 4, stride=2, padding=1, bias=not norm)]
    if norm:
        layers.append(nn.BatchNorm2d(cout))
    layers.append(nn.ReLU(inplace=True))
    return nn.Sequential(*layers)


def _up(cin, cout):
    # resize-convolution: no checkerboard artifacts from uneven kernel overlap
    return nn.Sequential(
        nn.Upsample(scale_factor=2, mode="nearest"),
        nn.Conv2d(cin, cout, 3, padding=1, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


class UNet(nn.Module):
    """Four stride-2 encoder stages, four decoder stages, skip concatenation.

    Widths are ``base * (1, 2, 4, 8)``; decoder stages upsample by nearest
    neighbour then convolve. The input itself is concatenated
    before the output conv, so the network sees full-resolution detail.
    Inputs of any size are reflect-padded to a multiple of 16 and cropped back.
    """

    def __init__(self, in_channels: int = 3, out_channels: int = 3, base: int = 64):
        super().__init__()
        widths = [base * 2 ** i for i in range(UNET_DEPTH)]
        self.multiple = 2 ** UNET_DEPTH
        self.enc = nn.ModuleList()
        cin = in_channels
        for i, w in enumerate(widths):
            self.enc.append(_down(cin, w, norm=i > 0))
            cin = w
        self.dec = nn.ModuleList()
        skips = widths[:-1][::-1]  # 4w, 2w, w
        for skip in skips:
            self.dec.append(_up(cin, skip))
            cin = 2 * skip
        self.dec.append(_up(cin, base))
        self.out = nn.Conv2d(base + in_channels, out_channels, 3, padding=1)
        init_weights(self)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x, (h, w) = pad_to_multiple(x, self.multiple)
        feats, y = [], x
        for stage in self.enc:
            y = stage(y)
            feats.append(y)
        for stage, skip in zip(self.dec[:-1], feats[-2::-1]):
            y = torch.cat([stage(y), skip], dim=1)
        y = torch.cat([self.dec[-1](y), x], dim=1)
        return torch.tanh(self.out(y))[..., :h, :w]


class GeneratorN(nn.Module):
    """Abnormal -> normal illumination."""

    def __init__(self, base: int = 64):
        super().__init__()
        self.net = UNet(3, 3, base)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ValueError(f"expected N x 3 x H x W input, got {tuple(x.shape)}")
        return self.net(x)


class GeneratorA(nn.Module):
    """Normal -> abnormal illumination, conditioned on a light vector.

    The light is broadcast to a 3-channel constant map and concatenated to
    the image. With ``conditioned=False`` the light argument is ignored and
    the network is a plain 3-channel generator.
    """

    def __init__(self, base: int = 64, conditioned: bool = True):
        super().__init__()
        self.conditioned = conditioned
        self.net = UNet(6 if conditioned else 3, 3, base)

    def forward(self, x: torch.Tensor, light: torch.Tensor | None = None) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ValueError(f"expected N x 3 x H x W input, got {tuple(x.shape)}")
        if not self.conditioned:
            return self.net(x)
        if light is None:
            raise ValueError("a light-conditioned generator needs a light")
        light = torch.as_tensor(light, dtype=x.dtype).reshape(-1, 3)
        if light.shape[0] == 1 and x.shape[0] > 1:
            light = light.expand(x.shape[0], 3)
        lmap = light[:, :, None, None].expand(-1, -1, x.shape[2], x.shape[3])
        return self.net(torch.cat([x, lmap], dim=1))


class Discriminator(nn.Module):
    """Patch discriminator: four stride-2 convs then a 1-channel logit head.

    A 256x256 input yields a 16x16 map of unbounded logits.
    """

    def __init__(self, in_channels: int = 3, base: int = 64):
        super().__init__()
        layers, cin = [], in_channels
        for i in range(DISC_LAYERS):
            cout = base * 2 ** i
            layers.append(nn.Conv2d(cin, cout, 4, stride=2, padding=1, bias=i == 0))
            if i > 0:
                layers.append(nn.BatchNorm2d(cout))
            layers.append(nn.LeakyReLU(0.2, inplace=True))
            cin = cout
        layers.append(nn.Conv2d(cin, 1, 3, stride=1, padding=1))
        self.model = nn.Sequential(*layers)
        init_weights(self)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ValueError(f"expected N x 3 x H x W input, got {tuple(x.shape)}")
        return self.model(x)


def _eval_call(module: nn.Module, *args) -> torch.Tensor:
    was_training = module.training
    module.eval()
    try:
        with torch.no_grad():
            return module(*args)
    finally:
        module.train(was_training)


def generate_normal(g: GeneratorN, img: np.ndarray) -> np.ndarray:
    return to_image(_eval_call(g, to_tensor(img)))


def generate_abnormal(g: GeneratorA, img: np.ndarray, light) -> np.ndarray:
    light = torch.as_tensor(np.asarray(light, dtype=np.float32).reshape(1, 3))
    return to_image(_eval_call(g, to_tensor(img), light))


def discriminate(d: Discriminator, img: np.ndarray) -> np.ndarray:
    """Logit map (``H/16 x W/16``) for one image."""
    return _eval_call(d, to_tensor(img))[0, 0].numpy()
