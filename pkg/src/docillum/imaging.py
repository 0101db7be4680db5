"""Image representation, cropping, PNG/manifest I/O and the synthetic document generator.

Every image in the package is an ``H x W x 3`` float32 array in ``[-1, 1]``
with RGB channel order. ``normalize`` is the only ingest path from 8-bit data.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage

MANIFEST_SCHEMA = "docillum.manifest/1"
POOLS = ("normal", "abnormal", "heldout-paired")


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    pass


def _check_rgb(arr: np.ndarray) -> None:
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ShapeError(f"expected an H x W x 3 array, got shape {arr.shape}")


def normalize(raw: np.ndarray) -> np.ndarray:
    """Map 8-bit RGB values to [-1, 1]."""
    raw = np.asarray(raw)
    _check_rgb(raw)
    return (raw.astype(np.float32) / np.float32(127.5)) - np.float32(1.0)


def denormalize(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    _check_rgb(img)
    return np.clip(np.rint((img.astype(np.float64) + 1.0) * 127.5), 0, 255).astype(np.uint8)


def random_crop(img: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    """Return a ``size x size`` view of ``img`` at a uniformly drawn offset."""
    h, w = img.shape[:2]
    if h < size or w < size:
        raise ShapeError(f"cannot crop {size}x{size} from a {h}x{w} image")
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    return img[top:top + size, left:left + size]


def read_png(path) -> np.ndarray:
    with PILImage.open(path) as im:
        return normalize(np.asarray(im.convert("RGB")))


def write_png(path, img: np.ndarray) -> None:
    PILImage.fromarray(denormalize(img), mode="RGB").save(path)


# ---------------------------------------------------------------------------
# synthetic documents


@dataclass
class SynthSpec:
    """Knobs for one synthetic document and its degradation.

    ``shading_smoothness`` is the spacing of the shading control grid as a
    fraction of the canvas; larger values give smoother fields.
    """

    canvas_size: int | tuple[int, int] = 256
    seed: int = 0
    text_density: float = 0.6
    figure_count: int = 1
    light: Optional[tuple[float, float, float]] = None
    shading_smoothness: float = 0.35
    shading_amplitude: float = 0.12

    def __post_init__(self):
        h, w = self.shape
        if h < 1 or w < 1:
            raise ValueError(f"canvas must be positive, got {self.canvas_size}")
        if not 0.0 <= self.text_density <= 1.0:
            raise ValueError("text_density must lie in [0, 1]")
        if self.figure_count < 0:
            raise ValueError("figure_count must be >= 0")
        if self.shading_smoothness <= 0:
            raise ValueError("shading_smoothness must be positive")
        if not 0.0 <= self.shading_amplitude < 1.0:
            raise ValueError("shading_amplitude must lie in [0, 1)")

    @property
    def shape(self) -> tuple[int, int]:
        if isinstance(self.canvas_size, int):
            return self.canvas_size, self.canvas_size
        return tuple(self.canvas_size)


def _draw_word(refl, rng, top, left, height, width, ink):
    # glyph-like strokes: vertical stems plus partial top/bottom bars
    cols = rng.random(width) < 0.55
    cols[::3] = False
    block = np.zeros((height, width), dtype=bool)
    block[:, cols] = True
    bars = rng.random(width) < 0.3
    block[0, bars] = True
    block[height // 2, rng.random(width) < 0.25] = True
    block[-1, rng.random(width) < 0.3] = True
    region = refl[top:top + height, left:left + width]
    region[block] = ink


def synth_clean_document(spec: SynthSpec) -> np.ndarray:
    """Render a clean, uniformly lit document page.

    The background is exactly white (+1); text is rendered as rows of dark
    glyph-like strokes and figures as colored blocks with a gradient.
    """
    rng = np.random.default_rng(spec.seed)
    h, w = spec.shape
    refl = np.ones((h, w, 3), dtype=np.float64)

    margin_y, margin_x = max(1, round(0.06 * h)), max(1, round(0.06 * w))
    line_h = max(3, round(min(h, w) / 36))
    pitch = max(line_h + 1, round(1.9 * line_h))
    char_w = max(1, round(line_h * 0.6))

    y = margin_y
    while y + line_h <= h - margin_y:
        if rng.random() < spec.text_density:
            x = margin_x + (rng.integers(0, 3) * char_w if rng.random() < 0.2 else 0)
            right = w - margin_x - (rng.integers(0, w // 3 + 1) if rng.random() < 0.25 else 0)
            ink = rng.uniform(0.03, 0.25, size=3)
            ink = np.full(3, ink.mean()) if rng.random() < 0.85 else ink
            while True:
                width = int(rng.integers(2, 9)) * char_w
                if x + width > right:
                    break
                _draw_word(refl, rng, y, x, line_h, width, ink)
                x += width + char_w
        y += pitch

    for _ in range(spec.figure_count):
        fh = int(rng.integers(max(2, h // 8), max(3, h // 3)))
        fw = int(rng.integers(max(2, w // 6), max(3, w // 2)))
        top = int(rng.integers(0, max(1, h - fh)))
        left = int(rng.integers(0, max(1, w - fw)))
        c0 = rng.uniform(0.1, 0.9, size=3)
        c1 = rng.uniform(0.1, 0.9, size=3)
        ramp = np.linspace(0.0, 1.0, fw)[None, :, None]
        block = c0 * (1 - ramp) + c1 * ramp
        block = np.broadcast_to(block, (fh, fw, 3)).copy()
        # inner disc in a third color
        yy, xx = np.mgrid[0:fh, 0:fw]
        r = 0.3 * min(fh, fw)
        disc = (yy - fh / 2) ** 2 + (xx - fw / 2) ** 2 < r ** 2
        block[disc] = rng.uniform(0.05, 0.95, size=3)
        refl[top:top + fh, left:left + fw] = block

    return (refl * 2.0 - 1.0).astype(np.float32)


def background_mask(clean: np.ndarray, threshold: float = 0.999) -> np.ndarray:
    """Pixels that are white paper in a clean document."""
    return np.all(np.asarray(clean) >= threshold, axis=-1)


def _check_light(light) -> np.ndarray:
    light = np.asarray(light, dtype=np.float64).reshape(-1)
    if light.shape != (3,):
        raise ShapeError(f"light must have 3 components, got {light.shape}")
    if not np.all(np.isfinite(light)) or np.any(np.abs(light) >= 1.0):
        raise DomainError(f"light components must lie in (-1, 1), got {light.tolist()}")
    return light


def shading_field(
    clean: np.ndarray, light, spec: SynthSpec, rng: np.random.Generator
) -> np.ndarray:
    """Smooth positive ``H x W x 3`` reflectance multiplier.

    The per-channel mean over the background mask of ``clean`` equals
    ``(light + 1) / 2`` exactly.
    """
    light = _check_light(light)
    target = (light + 1.0) / 2.0
    h, w = clean.shape[:2]

    if spec.shading_amplitude > 0:
        n = max(2, int(round(1.0 / spec.shading_smoothness)) + 1)
        grid = rng.standard_normal((n, n))
        # add a global tilt so that one side of the page is darker
        angle = rng.uniform(0, 2 * np.pi)
        gy, gx = np.mgrid[0:n, 0:n] / (n - 1) - 0.5
        grid = grid + 2.0 * (np.cos(angle) * gx + np.sin(angle) * gy)
        coords = np.stack(np.meshgrid(
            np.linspace(0, n - 1, h), np.linspace(0, n - 1, w), indexing="ij"))
        f = ndimage.map_coordinates(grid, coords, order=3, mode="nearest")
        f = f - f.mean()
        f = f / max(np.abs(f).max(), 1e-12)
        base = 1.0 + spec.shading_amplitude * f
    else:
        base = np.ones((h, w))

    mask = background_mask(clean)
    if not mask.any():
        mask = np.ones((h, w), dtype=bool)
    base = base / base[mask].mean()
    return base[:, :, None] * target[None, None, :]


def apply_illumination(
    clean: np.ndarray, light, spec: SynthSpec, rng: np.random.Generator
) -> np.ndarray:
    """Degrade a clean page with multiplicative colored shading."""
    clean = np.asarray(clean)
    _check_rgb(clean)
    s = shading_field(clean, light, spec, rng)
    refl = (clean.astype(np.float64) + 1.0) / 2.0
    out = np.clip(refl * s, 0.0, 1.0)
    return (out * 2.0 - 1.0).astype(np.float32)


def sample_light(rng: np.random.Generator) -> np.ndarray:
    """Draw a plausible ambient light: dimmed and tinted, in normalized units."""
    brightness = rng.uniform(0.4, 0.85)
    tint = rng.uniform(-1.0, 1.0, size=3)
    refl = np.clip(brightness * (1.0 + 0.15 * tint), 0.3, 0.88)
    return refl * 2.0 - 1.0


# ---------------------------------------------------------------------------
# dataset manifests


@dataclass
class ManifestEntry:
    path: str
    pool: str
    light: Optional[list[float]] = None
    clean: Optional[str] = None

    def __post_init__(self):
        if self.pool not in POOLS:
            raise ValueError(f"unknown pool {self.pool!r}; expected one of {POOLS}")


@dataclass
class Manifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    root: Path = Path(".")

    def pool(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.pool == name]

    def resolve(self, rel: str) -> Path:
        return self.root / rel


def write_manifest(path, entries: Sequence[ManifestEntry]) -> None:
    doc = {
        "schema": MANIFEST_SCHEMA,
        "entries": [
            {k: v for k, v in vars(e).items() if v is not None} for e in entries
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def read_manifest(path) -> Manifest:
    path = Path(path)
    doc = json.loads(path.read_text())
    if doc.get("schema") != MANIFEST_SCHEMA:
        raise ValueError(f"{path}: unsupported manifest schema {doc.get('schema')!r}")
    entries = [ManifestEntry(**e) for e in doc["entries"]]
    return Manifest(entries=entries, root=path.parent)


def load_pool(manifest: Manifest, pool: str) -> tuple[list[np.ndarray], list]:
    """Read every image of a pool; returns (images, lights)."""
    entries = manifest.pool(pool)
    images = [read_png(manifest.resolve(e.path)) for e in entries]
    lights = [e.light for e in entries]
    return images, lights


def synth_dataset(out_dir, count: int, size: int, seed: int, heldout: Optional[int] = None) -> Path:
    """Write abnormal, normal and paired held-out pools plus ``manifest.json``.

    ``heldout`` defaults to ``count // 5``. Abnormal and normal pools are drawn
    from disjoint document seeds so no pairing exists between them.
    """
    out_dir = Path(out_dir)
    heldout = count // 5 if heldout is None else heldout
    for sub in POOLS:
        (out_dir / sub).mkdir(parents=True, exist_ok=True)
    ss = np.random.SeedSequence(seed)
    doc_seq, light_seq, shade_seq, knob_seq = ss.spawn(4)
    doc_seeds = doc_seq.generate_state(2 * count + heldout, dtype=np.uint32)
    light_rng = np.random.default_rng(light_seq)
    shade_rng = np.random.default_rng(shade_seq)
    knob_rng = np.random.default_rng(knob_seq)

    def make_spec(doc_seed):
        return SynthSpec(
            canvas_size=size,
            seed=int(doc_seed),
            text_density=float(knob_rng.uniform(0.4, 0.9)),
            figure_count=int(knob_rng.integers(0, 3)),
            shading_amplitude=float(knob_rng.uniform(0.04, 0.12)),
        )

    entries: list[ManifestEntry] = []
    for i in range(count):
        spec = make_spec(doc_seeds[i])
        light = sample_light(light_rng)
        clean = synth_clean_document(spec)
        deg = apply_illumination(clean, light, spec, shade_rng)
        rel = f"abnormal/{i:05d}.png"
        write_png(out_dir / rel, deg)
        entries.append(ManifestEntry(rel, "abnormal", light=[float(v) for v in light]))
    for i in range(count):
        spec = make_spec(doc_seeds[count + i])
        rel = f"normal/{i:05d}.png"
        write_png(out_dir / rel, synth_clean_document(spec))
        entries.append(ManifestEntry(rel, "normal"))
    for i in range(heldout):
        spec = make_spec(doc_seeds[2 * count + i])
        light = sample_light(light_rng)
        clean = synth_clean_document(spec)
        deg = apply_illumination(clean, light, spec, shade_rng)
        rel, rel_clean = f"heldout-paired/{i:05d}.png", f"heldout-paired/{i:05d}_clean.png"
        write_png(out_dir / rel, deg)
        write_png(out_dir / rel_clean, clean)
        entries.append(ManifestEntry(rel, "heldout-paired", light=[float(v) for v in light], clean=rel_clean))
    manifest_path = out_dir / "manifest.json"
    write_manifest(manifest_path, entries)
    return manifest_path
