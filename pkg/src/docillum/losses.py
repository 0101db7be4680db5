"""Adversarial, cycle and identity losses and the weighted generator objective."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F

GENERATOR_TERMS = ("gan_a", "gan_b", "cyc_a", "cyc_b", "id_a", "id_b")


class TrainingDivergenceError(FloatingPointError):
    def __init__(self, term: str, value, context: str = ""):
        self.term = term
        self.value = value
        msg = f"non-finite loss term {term!r} = {value}"
        super().__init__(msg + (f" ({context})" if context else ""))


@dataclass
class LossWeights:
    lambda1: float = 10.0  # cycle
    lambda2: float = 5.0  # identity
    gan: bool = True
    cycle: bool = True
    identity: bool = True

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be non-negative")

    @classmethod
    def from_config(cls, loss_cfg) -> "LossWeights":
        return cls(loss_cfg.lambda1, loss_cfg.lambda2, loss_cfg.gan, loss_cfg.cycle, loss_cfg.identity)


@dataclass
class LossReport:
    """Scalar values of one training step.

    ``gan_a``/``cyc_a``/``id_a`` belong to the branch that starts from an
    abnormal image, the ``_b`` terms to the branch that starts from a normal
    image. Disabled terms are reported as 0.
    """

    gan_a: float = 0.0
    gan_b: float = 0.0
    cyc_a: float = 0.0
    cyc_b: float = 0.0
    id_a: float = 0.0
    id_b: float = 0.0
    total: float = 0.0
    d_n: float = 0.0
    d_a: float = 0.0

    def as_dict(self) -> dict:
        return asdict(self)


def adv_disc_loss(real_scores: torch.Tensor, fake_scores: torch.Tensor) -> torch.Tensor:
    """``-log sigmoid(real) - log(1 - sigmoid(fake))``, each averaged over its map."""
    # softplus(-x) == -log sigmoid(x), stable for large |x|
    return F.softplus(-real_scores).mean() + F.softplus(fake_scores).mean()


def adv_gen_loss(fake_scores: torch.Tensor) -> torch.Tensor:
    """Non-saturating generator loss ``-log sigmoid(fake)``."""
    return F.softplus(-fake_scores).mean()


def l1_loss(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    return (a - b).abs().mean()


def cycle_loss(reconstructed: torch.Tensor, original: torch.Tensor) -> torch.Tensor:
    return l1_loss(reconstructed, original)


def identity_loss(output: torch.Tensor, input_img: torch.Tensor) -> torch.Tensor:
    return l1_loss(output, input_img)


def _value(v) -> float:
    return v.item() if isinstance(v, torch.Tensor) else float(v)


def check_finite(terms: dict, context: str = "") -> None:
    for name, v in terms.items():
        x = _value(v)
        if not math.isfinite(x):
            raise TrainingDivergenceError(name, x, context)


def total_loss(parts, w: LossWeights):
    """Generator objective: GAN terms + lambda1 * cycle terms + lambda2 * identity terms.

    ``parts`` is a mapping (or LossReport) with the six generator terms; the
    result is a tensor when any part is a tensor. Disabled groups contribute 0.
    """
    if isinstance(parts, LossReport):
        parts = parts.as_dict()
    missing = [k for k in GENERATOR_TERMS if k not in parts]
    if missing:
        raise KeyError(f"missing loss terms: {missing}")
    check_finite({k: parts[k] for k in GENERATOR_TERMS})
    total = 0.0
    if w.gan:
        total = total + parts["gan_a"] + parts["gan_b"]
    if w.cycle:
        total = total + w.lambda1 * (parts["cyc_a"] + parts["cyc_b"])
    if w.identity:
        total = total + w.lambda2 * (parts["id_a"] + parts["id_b"])
    return total
