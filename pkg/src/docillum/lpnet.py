"""Light prediction network: ambient background light of a document patch."""
from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .config import ConfigError, LPNetConfig
from .imaging import random_crop
from .schedule import lpnet_lr, set_lr
from .tensors import to_tensor

log = logging.getLogger(__name__)

LPNET_CHANNELS = (32, 32, 128, 128)
CHECKPOINT_SCHEMA = "docillum.lpnet/1"


class LPNet(nn.Module):
    """Stride-1 conv stack (BN + ReLU), global max pooling, linear head, Tanh.

    ``depth`` keeps the first ``depth`` layers of the (32, 32, 128, 128) stack;
    every layer preserves the spatial size.
    """

    def __init__(self, depth: int = 4):
        super().__init__()
        if not 1 <= depth <= len(LPNET_CHANNELS):
            raise ValueError(f"depth must be in 1..{len(LPNET_CHANNELS)}, got {depth}")
        self.depth = depth
        layers, cin = [], 3
        for cout in LPNET_CHANNELS[:depth]:
            layers += [nn.Conv2d(cin, cout, 3, stride=1, padding=1),
                       nn.BatchNorm2d(cout), nn.ReLU(inplace=True)]
            cin = cout
        self.features = nn.Sequential(*layers)
        self.head = nn.Linear(cin, 3)
        # small head keeps Tanh out of saturation at start; pooled maxima are large
        nn.init.normal_(self.head.weight, 0.0, 0.01)
        nn.init.zeros_(self.head.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ValueError(f"LPNet expects N x 3 x H x W input, got {tuple(x.shape)}")
        pooled = self.features(x).amax(dim=(2, 3))
        return torch.tanh(self.head(pooled))


def lpnet_forward(model: LPNet, img: np.ndarray) -> np.ndarray:
    """Predict the light of one ``H x W x 3`` image (eval mode)."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an H x W x 3 image, got shape {img.shape}")
    was_training = model.training
    model.eval()
    with torch.no_grad():
        out = model(to_tensor(img))[0].numpy()
    model.train(was_training)
    return out


def lpnet_loss(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """L1 light error: summed over the RGB components, averaged over the batch."""
    pred, gt = torch.as_tensor(pred), torch.as_tensor(gt)
    return (pred - gt).abs().sum(dim=-1).mean()


def train_lpnet(dataset, cfg: LPNetConfig, rng: np.random.Generator, model: LPNet | None = None):
    """Train on ``dataset``, a sequence of ``(image, light)`` pairs.

    Returns ``(model, log)`` where ``log`` holds one record per epoch.
    """
    if len(dataset) == 0:
        raise ConfigError("train_lpnet needs a non-empty labelled dataset")
    if cfg.depth < 1:
        raise ConfigError("lpnet.depth 0 means no light prior; nothing to train")
    images = [np.asarray(img) for img, _ in dataset]
    lights = np.asarray([light for _, light in dataset], dtype=np.float32)
    if lights.shape != (len(images), 3):
        raise ConfigError("every LPNet training item needs a 3-component light label")

    if model is None:
        model = LPNet(cfg.depth)
    # NHWC convolutions are markedly faster on CPU
    model = model.to(memory_format=torch.channels_last)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    model.train()
    history = []
    for epoch in range(cfg.epochs):
        lr = lpnet_lr(epoch, cfg)
        set_lr(opt, lr)
        order = rng.permutation(len(images))
        total, seen = 0.0, 0
        for start in range(0, len(order), cfg.batch):
            idx = order[start:start + cfg.batch]
            crops = np.stack([random_crop(images[i], cfg.crop, rng) for i in idx])
            x = to_tensor(crops).contiguous(memory_format=torch.channels_last)
            y = torch.from_numpy(lights[idx])
            loss = lpnet_loss(model(x), y)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
            seen += len(idx)
        record = {"epoch": epoch, "lr": lr, "loss": total / seen}
        history.append(record)
        log.info("lpnet epoch %d loss %.4f lr %.2e", epoch, record["loss"], lr)
    model.eval()
    return model, history


def predict_lights(model: LPNet, images, batch: int = 16) -> np.ndarray:
    model.eval()
    out = []
    with torch.no_grad():
        for start in range(0, len(images), batch):
            out.append(model(to_tensor(np.stack(images[start:start + batch]))).numpy())
    return np.concatenate(out) if out else np.zeros((0, 3), dtype=np.float32)


def save_lpnet(model: LPNet, path) -> None:
    torch.save({"schema": CHECKPOINT_SCHEMA, "depth": model.depth,
                "state_dict": model.state_dict()}, Path(path))


def load_lpnet(path) -> LPNet:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"LPNet checkpoint not found: {path}")
    blob = torch.load(path, map_location="cpu", weights_only=True)
    if blob.get("schema") != CHECKPOINT_SCHEMA:
        raise ConfigError(f"{path}: not an LPNet checkpoint (schema {blob.get('schema')!r})")
    model = LPNet(blob["depth"])
    model.load_state_dict(blob["state_dict"])
    model.eval()
    return model
