"""Conversions between ``H x W x 3`` numpy images and ``N x C x H x W`` tensors."""
from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F


def to_tensor(img, dtype=torch.float32) -> torch.Tensor:
    """Image or stack of images (``[N] x H x W x 3``) to an NCHW tensor."""
    arr = np.asarray(img)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[-1] != 3:
        raise ValueError(f"expected [N x] H x W x 3 images, got shape {arr.shape}")
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2))).to(dtype)


def to_image(t: torch.Tensor) -> np.ndarray:
    """NCHW tensor with N == 1 (or CHW) back to an ``H x W x 3`` float32 array."""
    t = t.detach().cpu()
    if t.ndim == 4:
        if t.shape[0] != 1:
            raise ValueError("to_image expects a single image; index the batch first")
        t = t[0]
    return t.permute(1, 2, 0).numpy().astype(np.float32)


def pad_to_multiple(x: torch.Tensor, multiple: int) -> tuple[torch.Tensor, tuple[int, int]]:
    """Reflect-pad the bottom/right edges so H and W divide ``multiple``."""
    h, w = x.shape[-2:]
    ph, pw = (-h) % multiple, (-w) % multiple
    if ph == 0 and pw == 0:
        return x, (h, w)
    # reflect needs pad < size; tiny inputs fall back to edge replication
    mode = "reflect" if ph < h and pw < w else "replicate"
    return F.pad(x, (0, pw, 0, ph), mode=mode), (h, w)
