"""Unpaired training loop, checkpointing and whole-image inference."""
from __future__ import annotations

import hashlib
import json
import logging
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from torch import nn

from .config import Config, ConfigError
from .imaging import load_pool, random_crop, read_manifest
from .lightstore import LightContainer, default_capacity
from .losses import (
    GENERATOR_TERMS,
    LossReport,
    LossWeights,
    adv_disc_loss,
    adv_gen_loss,
    check_finite,
    cycle_loss,
    identity_loss,
    total_loss,
)
from .lpnet import LPNet, load_lpnet
from .schedule import discriminator_lr, generator_lr, set_lr
from .tensors import to_image, to_tensor
from .translation import Discriminator, GeneratorA, GeneratorN

log = logging.getLogger(__name__)

CHECKPOINT_SCHEMA = "docillum.gan/1"
_CKPT_RE = re.compile(r"ckpt_(\d+)\.pt$")
# NHWC layout: faster CPU convolutions, same results up to rounding
CL = torch.channels_last


class ResourceError(MemoryError):
    pass


@dataclass
class ModelBundle:
    gen_n: GeneratorN
    gen_a: GeneratorA
    disc_n: Discriminator
    disc_a: Discriminator
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer
    weights: LossWeights
    lpnet: Optional[LPNet] = None
    container: Optional[LightContainer] = None
    epoch: int = 0
    rng: np.random.Generator = field(default_factory=np.random.default_rng)
    config_hash: str = ""

    @property
    def uses_prior(self) -> bool:
        return self.lpnet is not None

    def generators(self):
        return [self.gen_n, self.gen_a]

    def discriminators(self):
        return [self.disc_n, self.disc_a]


def param_hash(module: nn.Module) -> str:
    h = hashlib.sha256()
    for name, t in module.state_dict().items():
        h.update(name.encode())
        h.update(t.detach().cpu().numpy().tobytes())
    return h.hexdigest()


def _set_requires_grad(modules, flag: bool) -> None:
    for m in modules:
        for p in m.parameters():
            p.requires_grad_(flag)


def build_bundle(cfg: Config, lpnet: Optional[LPNet], num_abnormal: int) -> ModelBundle:
    """Fresh networks and optimizers; seeds torch and numpy from ``cfg.train.seed``."""
    tc = cfg.train
    torch.manual_seed(tc.seed)
    conditioned = lpnet is not None
    gen_n = GeneratorN(tc.base_channels)
    gen_a = GeneratorA(tc.base_channels, conditioned=conditioned)
    disc_n = Discriminator(base=tc.disc_channels)
    disc_a = Discriminator(base=tc.disc_channels)
    opt_g = torch.optim.Adam(list(gen_n.parameters()) + list(gen_a.parameters()),
                             lr=generator_lr(0, tc), betas=(0.5, 0.999))
    opt_d = torch.optim.Adam(list(disc_n.parameters()) + list(disc_a.parameters()),
                             lr=discriminator_lr(0, tc), betas=(0.5, 0.999))
    for m in (gen_n, gen_a, disc_n, disc_a, lpnet):
        if m is not None:
            m.to(memory_format=CL)
    container = None
    if conditioned:
        lpnet.eval()
        _set_requires_grad([lpnet], False)
        container = LightContainer(tc.container_capacity or default_capacity(num_abnormal))
    return ModelBundle(
        gen_n=gen_n, gen_a=gen_a, disc_n=disc_n, disc_a=disc_a, opt_g=opt_g, opt_d=opt_d,
        weights=LossWeights.from_config(tc.loss), lpnet=lpnet, container=container,
        rng=np.random.default_rng(tc.seed), config_hash=cfg.hash(),
    )


def generator_update(b: ModelBundle, real_a: torch.Tensor, real_n: torch.Tensor, rng) -> tuple[dict, dict]:
    """Steps (1)-(5): light prediction, the four generator branches, generator update.

    Returns ``(terms, fakes)``; ``fakes`` holds the translated images for the
    discriminator update.
    """
    w = b.weights
    zero = torch.zeros(())
    terms = {k: zero for k in GENERATOR_TERMS}
    fakes = {}
    for m in b.generators():
        m.train()

    light_p = light_r = None
    if b.uses_prior:
        with torch.no_grad():
            light_p = b.lpnet(real_a)
        b.container.extend(light_p.numpy())
        light_r = torch.from_numpy(b.container.sample_batch(rng, real_n.shape[0]))

    _set_requires_grad(b.discriminators(), False)
    if w.gan or w.cycle:
        fake_n = b.gen_n(real_a)
        fake_a = b.gen_a(real_n, light_r)
        fakes = {"n": fake_n, "a": fake_a}
        if w.cycle:
            terms["cyc_a"] = cycle_loss(b.gen_a(fake_n, light_p), real_a)
            terms["cyc_b"] = cycle_loss(b.gen_n(fake_a), real_n)
        if w.gan:
            terms["gan_a"] = adv_gen_loss(b.disc_n(fake_n))
            terms["gan_b"] = adv_gen_loss(b.disc_a(fake_a))
    if w.identity:
        terms["id_a"] = identity_loss(b.gen_a(real_a, light_p), real_a)
        terms["id_b"] = identity_loss(b.gen_n(real_n), real_n)

    total = total_loss(terms, w)
    check_finite({"total": total}, context=f"epoch {b.epoch}")
    b.opt_g.zero_grad(set_to_none=True)
    if isinstance(total, torch.Tensor) and total.requires_grad:
        total.backward()
        b.opt_g.step()
    terms["total"] = total
    return terms, fakes


def discriminator_update(b: ModelBundle, real_a: torch.Tensor, real_n: torch.Tensor, fakes: dict) -> dict:
    """Step (6): both discriminators on real images versus detached fakes."""
    if not b.weights.gan:
        return {"d_n": 0.0, "d_a": 0.0}
    _set_requires_grad(b.discriminators(), True)
    for m in b.discriminators():
        m.train()
    d_n = adv_disc_loss(b.disc_n(real_n), b.disc_n(fakes["n"].detach()))
    d_a = adv_disc_loss(b.disc_a(real_a), b.disc_a(fakes["a"].detach()))
    check_finite({"d_n": d_n, "d_a": d_a}, context=f"epoch {b.epoch}")
    b.opt_d.zero_grad(set_to_none=True)
    (d_n + d_a).backward()
    b.opt_d.step()
    return {"d_n": d_n.item(), "d_a": d_a.item()}


def train_step(b: ModelBundle, batch_abnormal, batch_normal, rng) -> LossReport:
    """One optimization step on a batch from each pool (numpy images or NCHW tensors)."""
    real_a = batch_abnormal if isinstance(batch_abnormal, torch.Tensor) else to_tensor(batch_abnormal)
    real_n = batch_normal if isinstance(batch_normal, torch.Tensor) else to_tensor(batch_normal)
    real_a, real_n = real_a.contiguous(memory_format=CL), real_n.contiguous(memory_format=CL)
    if real_a.shape[0] == 0 or real_n.shape[0] == 0:
        raise ValueError("train_step needs non-empty batches")
    terms, fakes = generator_update(b, real_a, real_n, rng)
    d = discriminator_update(b, real_a, real_n, fakes)
    values = {k: float(v.item() if isinstance(v, torch.Tensor) else v) for k, v in terms.items()}
    return LossReport(**values, **d)


def _epoch_order(n: int, total: int, rng) -> np.ndarray:
    """Indices of length ``total``: fresh permutations of ``range(n)`` concatenated."""
    reps = -(-total // n)
    return np.concatenate([rng.permutation(n) for _ in range(reps)])[:total]


def run_epoch(b: ModelBundle, pool_a, pool_n, batch: int, crop: int) -> dict:
    """Shuffle both pools independently, crop, and step through one epoch.

    The epoch covers the larger pool; the smaller pool and the final batch are
    filled by wrapping around fresh permutations, so every batch is full.
    """
    rng = b.rng
    total = -(-max(len(pool_a), len(pool_n)) // batch) * batch
    ia, inn = _epoch_order(len(pool_a), total, rng), _epoch_order(len(pool_n), total, rng)
    sums, steps = {}, 0
    for start in range(0, total, batch):
        xa = np.stack([random_crop(pool_a[i], crop, rng) for i in ia[start:start + batch]])
        xn = np.stack([random_crop(pool_n[i], crop, rng) for i in inn[start:start + batch]])
        report = train_step(b, xa, xn, rng)
        for k, v in report.as_dict().items():
            sums[k] = sums.get(k, 0.0) + v
        steps += 1
    return {k: v / steps for k, v in sums.items()}


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(b: ModelBundle, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"ckpt_{b.epoch:04d}.pt"
    torch.save({
        "schema": CHECKPOINT_SCHEMA,
        "gen_n": b.gen_n.state_dict(), "gen_a": b.gen_a.state_dict(),
        "disc_n": b.disc_n.state_dict(), "disc_a": b.disc_a.state_dict(),
        "opt_g": b.opt_g.state_dict(), "opt_d": b.opt_d.state_dict(),
        "torch_rng": torch.get_rng_state(),
        "conditioned": b.gen_a.conditioned,
    }, path)
    meta = {
        "schema": CHECKPOINT_SCHEMA,
        "epoch": b.epoch,
        "config_hash": b.config_hash,
        "rng_state": b.rng.bit_generator.state,
        "container": b.container.state_dict() if b.container is not None else None,
    }
    path.with_suffix(".json").write_text(json.dumps(meta, indent=1) + "\n")
    return path


def latest_checkpoint(directory) -> Optional[Path]:
    found = sorted(Path(directory).glob("ckpt_*.pt"), key=lambda p: int(_CKPT_RE.search(p.name).group(1)))
    return found[-1] if found else None


def load_checkpoint(b: ModelBundle, path, check_hash: bool = True) -> ModelBundle:
    """Restore networks, optimizers, rng state, container and epoch into ``b``."""
    path = Path(path)
    blob = torch.load(path, map_location="cpu", weights_only=False)
    meta = json.loads(path.with_suffix(".json").read_text())
    if blob.get("schema") != CHECKPOINT_SCHEMA or meta.get("schema") != CHECKPOINT_SCHEMA:
        raise ConfigError(f"{path}: not a translation checkpoint")
    if check_hash and b.config_hash and meta["config_hash"] != b.config_hash:
        raise ConfigError(f"{path}: config hash {meta['config_hash']} does not match run config {b.config_hash}")
    for name in ("gen_n", "gen_a", "disc_n", "disc_a", "opt_g", "opt_d"):
        getattr(b, name).load_state_dict(blob[name])
    torch.set_rng_state(blob["torch_rng"])
    b.rng.bit_generator.state = meta["rng_state"]
    if meta["container"] is not None:
        b.container = LightContainer.from_state_dict(meta["container"])
    b.epoch = meta["epoch"]
    return b


def load_generator(path) -> GeneratorN:
    """Only the abnormal-to-normal generator of a checkpoint, in eval mode."""
    blob = torch.load(Path(path), map_location="cpu", weights_only=False)
    if blob.get("schema") != CHECKPOINT_SCHEMA:
        raise ConfigError(f"{path}: not a translation checkpoint")
    state = blob["gen_n"]
    base = state["net.enc.0.0.weight"].shape[0]
    g = GeneratorN(base)
    g.load_state_dict(state)
    g.eval()
    return g


# ---------------------------------------------------------------------------
# driver


def fit(cfg: Config, manifest_path, out_dir, resume: bool = False,
        stop_after_epoch: Optional[int] = None) -> list[Path]:
    """Train the translation networks; returns the checkpoints written by this call.

    ``stop_after_epoch`` ends this invocation early (a pause); a later call
    with ``resume=True`` continues from the newest checkpoint.
    """
    tc = cfg.train
    out_dir = Path(out_dir)
    ckpt_dir = out_dir / "checkpoints"
    lpnet = None
    if cfg.lpnet.depth > 0:
        if not tc.lpnet_checkpoint:
            raise ConfigError("train.lpnet_checkpoint is required when lpnet.depth > 0")
        lpnet = load_lpnet(tc.lpnet_checkpoint)

    manifest = read_manifest(manifest_path)
    pool_a, _ = load_pool(manifest, "abnormal")
    pool_n, _ = load_pool(manifest, "normal")
    if not pool_a or not pool_n:
        raise ConfigError("training needs non-empty abnormal and normal pools")

    b = build_bundle(cfg, lpnet, len(pool_a))
    log_path = out_dir / "train_log.jsonl"
    out_dir.mkdir(parents=True, exist_ok=True)
    if resume:
        latest = latest_checkpoint(ckpt_dir)
        if latest is None:
            raise ConfigError(f"nothing to resume in {ckpt_dir}")
        load_checkpoint(b, latest)
        if log_path.exists():
            kept = [ln for ln in log_path.read_text().splitlines()
                    if ln and json.loads(ln)["epoch"] < b.epoch]
            log_path.write_text("".join(ln + "\n" for ln in kept))
        log.info("resumed from %s at epoch %d", latest, b.epoch)
    elif log_path.exists():
        log_path.unlink()

    written = []
    last = tc.epochs if stop_after_epoch is None else min(tc.epochs, stop_after_epoch)
    while b.epoch < last:
        epoch = b.epoch
        lr_g, lr_d = generator_lr(epoch, tc), discriminator_lr(epoch, tc)
        set_lr(b.opt_g, lr_g)
        set_lr(b.opt_d, lr_d)
        t0 = time.time()
        means = run_epoch(b, pool_a, pool_n, tc.batch, tc.crop)
        b.epoch = epoch + 1
        record = {"epoch": epoch, "lr_g": lr_g, "lr_d": lr_d, **means,
                  "seconds": round(time.time() - t0, 3)}
        with log_path.open("a") as fh:
            fh.write(json.dumps(record) + "\n")
        log.info("epoch %d/%d total %.4f d_n %.4f d_a %.4f (%.1fs)", epoch + 1, tc.epochs,
                 means["total"], means["d_n"], means["d_a"], record["seconds"])
        if b.epoch % tc.checkpoint_every == 0 or b.epoch == last:
            written.append(save_checkpoint(b, ckpt_dir))
    return written


def read_log(path) -> list[dict]:
    return [json.loads(ln) for ln in Path(path).read_text().splitlines() if ln]


def infer(model, img: np.ndarray) -> np.ndarray:
    """Correct a whole image of any size with one forward pass of the normal generator."""
    g = model.gen_n if isinstance(model, ModelBundle) else model
    x = to_tensor(img)
    g.eval()
    try:
        with torch.no_grad():
            y = g(x)
    except (MemoryError, RuntimeError) as exc:
        if isinstance(exc, RuntimeError) and "memory" not in str(exc).lower():
            raise
        h, w = x.shape[-2:]
        raise ResourceError(
            f"out of memory correcting a {h}x{w} image; downscale it (e.g. to {h // 2}x{w // 2}) and retry"
        ) from exc
    return to_image(y)
