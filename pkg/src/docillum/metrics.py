"""Evaluation metrics: MS-SSIM, edit distance, character error rate, area resizing."""
from __future__ import annotations

import csv
import json
import math
import shlex
import subprocess
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage

from .imaging import background_mask, read_png

EVAL_SCHEMA = "docillum.eval/1"
EVAL_AREA = 598400


@dataclass(frozen=True)
class MsSsimParams:
    weights: tuple = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
    win_size: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    data_range: float = 1.0


DEFAULT_MS_SSIM = MsSsimParams()


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(x: np.ndarray, win: np.ndarray) -> np.ndarray:
    """Separable correlation of a 2-D array keeping only fully covered positions."""
    r = len(win) // 2
    y = ndimage.correlate1d(x, win, axis=0, mode="constant")
    y = ndimage.correlate1d(y, win, axis=1, mode="constant")
    return y[r:x.shape[0] - r, r:x.shape[1] - r]


def _ssim_components(x: np.ndarray, y: np.ndarray, p: MsSsimParams) -> tuple[float, float]:
    """Mean SSIM and mean contrast-structure term of one channel."""
    win = gaussian_window(p.win_size, p.sigma)
    c1, c2 = (p.k1 * p.data_range) ** 2, (p.k2 * p.data_range) ** 2
    mx, my = _filter_valid(x, win), _filter_valid(y, win)
    sxx = _filter_valid(x * x, win) - mx * mx
    syy = _filter_valid(y * y, win) - my * my
    sxy = _filter_valid(x * y, win) - mx * my
    cs = (2 * sxy + c2) / (sxx + syy + c2)
    lum = (2 * mx * my + c1) / (mx * mx + my * my + c1)
    return float((lum * cs).mean()), float(cs.mean())


def _downsample(x: np.ndarray) -> np.ndarray:
    h, w = (x.shape[0] // 2) * 2, (x.shape[1] // 2) * 2
    x = x[:h, :w]
    return 0.25 * (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2])


def _as_unit_range(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    return (img + 1.0) / 2.0


def usable_scales(shape, params: MsSsimParams = DEFAULT_MS_SSIM) -> int:
    """Number of dyadic scales whose smallest image still fits the window."""
    m = min(shape[:2])
    s = 0
    while s < len(params.weights) and m >= params.win_size * 2 ** s:
        s += 1
    return s


def ms_ssim(a: np.ndarray, b: np.ndarray, params: MsSsimParams = DEFAULT_MS_SSIM,
            return_components: bool = False):
    """Multi-scale SSIM of two ``[-1, 1]`` images, computed on their ``[0, 1]`` mapping.

    Each channel is scored separately and the channel scores averaged.
    Trailing zero weights drop their scales, so weights ``(1, 0, 0, 0, 0)``
    give single-scale SSIM. When the image is too small for every scale the
    coarsest scales are dropped and the remaining weights renormalized.
    """
    if np.shape(a) != np.shape(b):
        raise ValueError(f"shape mismatch: {np.shape(a)} vs {np.shape(b)}")
    x, y = _as_unit_range(a), _as_unit_range(b)
    weights = np.asarray(params.weights, dtype=np.float64)
    nonzero = np.flatnonzero(weights)
    if len(nonzero) == 0:
        raise ValueError("at least one MS-SSIM weight must be positive")
    weights = weights[:nonzero[-1] + 1]
    n = min(len(weights), usable_scales(x.shape, params))
    if n == 0:
        raise ValueError(f"image {x.shape[:2]} is smaller than the {params.win_size}px window")
    weights = weights[:n] / weights[:n].sum()

    per_channel, components = [], []
    for c in range(x.shape[2]):
        xc, yc = x[:, :, c], y[:, :, c]
        scores = []
        for s in range(n):
            ssim_val, cs_val = _ssim_components(xc, yc, params)
            scores.append(ssim_val if s == n - 1 else cs_val)
            if s < n - 1:
                xc, yc = _downsample(xc), _downsample(yc)
        scores = np.maximum(np.asarray(scores), 0.0)
        components.append(scores)
        per_channel.append(float(np.prod(scores ** weights)))
    value = float(np.mean(per_channel))
    if return_components:
        return value, np.asarray(components)
    return value


def resize_to_area(img: np.ndarray, area: int = EVAL_AREA) -> np.ndarray:
    """Bilinear resize preserving aspect ratio so that ``H * W`` is close to ``area``."""
    if area <= 0:
        raise ValueError("area must be positive")
    img = np.asarray(img, dtype=np.float32)
    h, w = img.shape[:2]
    if h < 1 or w < 1:
        raise ValueError(f"degenerate image dimensions {h}x{w}")
    scale = math.sqrt(area / (h * w))
    nh, nw = max(1, round(h * scale)), max(1, round(w * scale))
    if (nh, nw) == (h, w):
        return img.copy()
    chans = [np.asarray(PILImage.fromarray(img[:, :, c], mode="F").resize((nw, nh), PILImage.BILINEAR))
             for c in range(img.shape[2])]
    return np.stack(chans, axis=-1).astype(np.float32)


# ---------------------------------------------------------------------------
# text metrics


def edit_distance(ref: str, hyp: str) -> int:
    """Levenshtein distance with unit insertion, deletion and substitution costs."""
    if len(ref) < len(hyp):
        ref, hyp = hyp, ref
    prev = list(range(len(hyp) + 1))
    for i, rc in enumerate(ref, 1):
        cur = [i]
        for j, hc in enumerate(hyp, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (rc != hc)))
        prev = cur
    return prev[-1]


def alignment_counts(ref: str, hyp: str) -> tuple[int, int, int, int]:
    """(substitutions, deletions, insertions, correct) of one minimal alignment.

    Ties prefer the diagonal move (match or substitution).
    """
    n, m = len(ref), len(hyp)
    dp = np.zeros((n + 1, m + 1), dtype=np.int64)
    dp[:, 0] = np.arange(n + 1)
    dp[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            dp[i, j] = min(dp[i - 1, j] + 1, dp[i, j - 1] + 1,
                           dp[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]))
    s = d = ins = c = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and dp[i, j] == dp[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            if ref[i - 1] == hyp[j - 1]:
                c += 1
            else:
                s += 1
            i, j = i - 1, j - 1
        elif i > 0 and dp[i, j] == dp[i - 1, j] + 1:
            d += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return s, d, ins, c


def cer(ref: str, hyp: str) -> float:
    """Character error rate ``(s + d + i) / (s + d + c)``."""
    if len(ref) == 0:
        raise ValueError("CER is undefined for an empty reference")
    s, d, i, c = alignment_counts(ref, hyp)
    return (s + d + i) / (s + d + c)


# ---------------------------------------------------------------------------
# evaluation reports


def background_color_error(img: np.ndarray, clean: np.ndarray) -> float:
    """Mean absolute per-channel difference of the paper background color."""
    mask = background_mask(clean)
    if not mask.any():
        mask = np.ones(mask.shape, dtype=bool)
    return float(np.abs(np.asarray(img)[mask].mean(0) - np.asarray(clean)[mask].mean(0)).mean())


def run_ocr(command: str, image_path) -> str:
    """Run a user-supplied OCR command template; ``{image}`` is replaced by the path."""
    args = shlex.split(command.format(image=shlex.quote(str(image_path))))
    proc = subprocess.run(args, capture_output=True, text=True, check=True)
    return proc.stdout


@dataclass
class EvalItem:
    corrected: str
    ground_truth: Optional[str] = None
    degraded: Optional[str] = None
    ref_text: Optional[str] = None
    hyp_text: Optional[str] = None


def read_eval_manifest(path) -> tuple[list[EvalItem], Path]:
    path = Path(path)
    doc = json.loads(path.read_text())
    if doc.get("schema") != EVAL_SCHEMA:
        raise ValueError(f"{path}: unsupported evaluation manifest schema {doc.get('schema')!r}")
    return [EvalItem(**it) for it in doc["items"]], path.parent


def write_eval_manifest(path, items) -> None:
    doc = {"schema": EVAL_SCHEMA,
           "items": [{k: v for k, v in vars(it).items() if v is not None} for it in items]}
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def _text_scores(ref: str, hyp: str) -> dict:
    ref, hyp = ref.strip(), hyp.strip()
    out = {"ed": edit_distance(ref, hyp)}
    out["cer"] = cer(ref, hyp) if ref else float("nan")
    return out


def evaluate_items(items, root=".", area: Optional[int] = EVAL_AREA,
                   ocr_command: Optional[str] = None) -> dict:
    """Score every item; returns ``{"items": [...], "mean": {...}}``.

    Image paths are resolved against ``root``. MS-SSIM is computed after
    resizing both images to ``area`` pixels (skipped when ``area`` is None).
    """
    root = Path(root)
    rows = []
    for it in items:
        row = {"corrected": it.corrected}
        corrected = read_png(root / it.corrected)
        if it.ground_truth:
            gt = read_png(root / it.ground_truth)
            fit = (lambda im: resize_to_area(im, area)) if area else (lambda im: im)
            gt_r = fit(gt)
            row["ms_ssim"] = ms_ssim(fit(corrected), gt_r)
            row["bg_error"] = background_color_error(corrected, gt)
            if it.degraded:
                degraded = read_png(root / it.degraded)
                row["ms_ssim_degraded"] = ms_ssim(fit(degraded), gt_r)
                row["bg_error_degraded"] = background_color_error(degraded, gt)
        hyp = None
        if it.hyp_text:
            hyp = (root / it.hyp_text).read_text()
        elif ocr_command and it.ref_text:
            hyp = run_ocr(ocr_command, root / it.corrected)
        if it.ref_text and hyp is not None:
            row.update(_text_scores((root / it.ref_text).read_text(), hyp))
        rows.append(row)
    keys = ["ms_ssim", "ed", "cer", "bg_error", "ms_ssim_degraded", "bg_error_degraded"]
    mean = {}
    for k in keys:
        vals = [r[k] for r in rows if k in r and not math.isnan(r[k])]
        if vals:
            mean[k] = float(np.mean(vals))
    return {"items": rows, "mean": mean, "count": len(rows)}


def write_report(report: dict, out_dir) -> tuple[Path, Path]:
    """Write ``report.json`` and ``report.csv`` into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jpath, cpath = out_dir / "report.json", out_dir / "report.csv"
    jpath.write_text(json.dumps(report, indent=1) + "\n")
    cols = ["corrected", "ms_ssim", "ed", "cer", "bg_error", "ms_ssim_degraded", "bg_error_degraded"]
    with cpath.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(report["items"])
        writer.writerow({"corrected": "MEAN", **report["mean"]})
    return jpath, cpath


def summarize(report: dict) -> str:
    m = report["mean"]
    parts = [f"{report['count']} items"]
    for key, label in [("ms_ssim", "MS-SSIM"), ("ed", "ED"), ("cer", "CER"), ("bg_error", "bg-err")]:
        if key in m:
            parts.append(f"{label} {m[key]:.4f}")
    if "ms_ssim_degraded" in m:
        parts.append(f"(input MS-SSIM {m['ms_ssim_degraded']:.4f}, bg-err {m['bg_error_degraded']:.4f})")
    return " | ".join(parts)
