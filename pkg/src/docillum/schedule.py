"""Piecewise-linear learning-rate schedules and optimizer helpers."""
from __future__ import annotations


def linear_decay(epoch: float, base: float, final: float, total: int, decay: int) -> float:
    """Hold ``base`` until ``total - decay``, then move linearly to ``final`` at ``total``.

    Defined on the closed interval ``[0, total]`` and continuous everywhere.
    """
    start = total - decay
    if epoch <= start or decay == 0:
        return base
    frac = min(1.0, (epoch - start) / decay)
    return base + (final - base) * frac


def lpnet_lr(epoch: float, cfg) -> float:
    return linear_decay(epoch, cfg.lr, cfg.lr_final, cfg.epochs, cfg.decay_epochs)


def generator_lr(epoch: float, cfg) -> float:
    # constant for constant_epochs, then to zero over decay_epochs
    end = cfg.constant_epochs + cfg.decay_epochs
    return linear_decay(epoch, cfg.gen_lr, 0.0, end, cfg.decay_epochs) if epoch <= end else 0.0


def discriminator_lr(epoch: float, cfg) -> float:
    return cfg.disc_lr_multiplier * generator_lr(epoch, cfg)


def set_lr(optimizer, lr: float) -> None:
    for group in optimizer.param_groups:
        group["lr"] = lr
