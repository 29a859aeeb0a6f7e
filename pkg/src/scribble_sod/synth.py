"""Synthetic scribble-annotated saliency dataset.

Each image is a low-frequency two-colour gradient with pixel noise and one to
three non-overlapping filled ellipses.  The union of the ellipses is the
ground truth.  Every ellipse gets a thick polyline scribble covering 10-30% of
its pixels, strictly inside it; one polyline outside all objects marks the
background.
"""

from __future__ import annotations

import colorsys
import logging
from pathlib import Path

import numpy as np

from .config import Label
from .data import Sample, write_manifest
from .netpbm import save_image, save_mask, save_scribble

log = logging.getLogger(__name__)

NOISE_SIGMA = 0.03
MIN_COLOR_DIST = 0.25
COVERAGE = (0.10, 0.30)
MAX_RETRIES = 100


class PlacementError(RuntimeError):
    pass


def _shift(mask: np.ndarray, dy: int, dx: int) -> np.ndarray:
    out = np.zeros_like(mask)
    h, w = mask.shape
    out[max(dy, 0):h + min(dy, 0), max(dx, 0):w + min(dx, 0)] = \
        mask[max(-dy, 0):h + min(-dy, 0), max(-dx, 0):w + min(-dx, 0)]
    return out


def erode(mask: np.ndarray, r: int = 1) -> np.ndarray:
    out = mask.copy()
    for _ in range(r):
        out = out & _shift(out, 1, 0) & _shift(out, -1, 0) & _shift(out, 0, 1) & _shift(out, 0, -1)
    return out


def dilate(mask: np.ndarray, r: int = 1) -> np.ndarray:
    out = mask.copy()
    for _ in range(r):
        out = out | _shift(out, 1, 0) | _shift(out, -1, 0) | _shift(out, 0, 1) | _shift(out, 0, -1)
    return out


def ellipse_mask(size: int, cy: float, cx: float, a: float, b: float, theta: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    dy, dx = yy - cy, xx - cx
    c, s = np.cos(theta), np.sin(theta)
    u = (dx * c + dy * s) / a
    v = (-dx * s + dy * c) / b
    return u * u + v * v <= 1.0


def _line(p0, p1) -> list:
    n = int(max(abs(p1[0] - p0[0]), abs(p1[1] - p0[1]))) + 1
    ys = np.rint(np.linspace(p0[0], p1[0], n)).astype(int)
    xs = np.rint(np.linspace(p0[1], p1[1], n)).astype(int)
    return list(zip(ys, xs))


_BRUSH = [(0, 0), (-1, 0), (1, 0), (0, -1), (0, 1), (-1, -1), (-1, 1), (1, -1), (1, 1)]


def _stroke(rng, region: np.ndarray, target: int, max_waypoints: int = 400) -> np.ndarray:
    """Thick random polyline inside ``region`` stopping at exactly ``target`` pixels."""
    pts = np.argwhere(region)
    if len(pts) == 0 or target > len(pts):
        raise PlacementError("stroke region too small")
    out = np.zeros_like(region)
    count = 0
    cur = tuple(pts[rng.integers(len(pts))])
    for _ in range(max_waypoints):
        nxt = tuple(pts[rng.integers(len(pts))])
        for y, x in _line(cur, nxt):
            for by, bx in _BRUSH:
                yy, xx = y + by, x + bx
                if 0 <= yy < region.shape[0] and 0 <= xx < region.shape[1] and region[yy, xx] and not out[yy, xx]:
                    out[yy, xx] = True
                    count += 1
                    if count >= target:
                        return out
        cur = nxt
    raise PlacementError("stroke did not reach its target coverage")


def _background_stroke(rng, allowed: np.ndarray, min_pixels: int) -> np.ndarray:
    pts = np.argwhere(allowed)
    if len(pts) < min_pixels:
        raise PlacementError("no room for a background scribble")
    for _ in range(MAX_RETRIES):
        path = [tuple(pts[rng.integers(len(pts))])]
        for _ in range(int(rng.integers(3, 7))):
            for _ in range(20):
                cand = tuple(pts[rng.integers(len(pts))])
                seg = _line(path[-1], cand)
                if all(allowed[y, x] for y, x in seg):
                    path.append(cand)
                    break
        out = np.zeros_like(allowed)
        for p0, p1 in zip(path[:-1], path[1:]):
            for y, x in _line(p0, p1):
                for by, bx in _BRUSH:
                    yy, xx = y + by, x + bx
                    if 0 <= yy < allowed.shape[0] and 0 <= xx < allowed.shape[1] and allowed[yy, xx]:
                        out[yy, xx] = True
        if out.sum() >= min_pixels:
            return out
    raise PlacementError("background scribble too short")


def _muted_color(rng) -> np.ndarray:
    grey = rng.uniform(0.2, 0.8)
    return np.clip(grey + rng.uniform(-0.12, 0.12, 3), 0.0, 1.0)


def _vivid_color(rng) -> np.ndarray:
    return np.array(colorsys.hsv_to_rgb(rng.random(), rng.uniform(0.6, 1.0), rng.uniform(0.55, 1.0)))


def synth_sample(rng: np.random.Generator, size: int, sample_id: str = "") -> Sample:
    """One synthetic sample; raises :class:`PlacementError` when placement fails."""
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    angle = rng.uniform(0, 2 * np.pi)
    t = xx * np.cos(angle) + yy * np.sin(angle)
    t = (t - t.min()) / max(t.max() - t.min(), 1e-12)
    c0, c1 = _muted_color(rng), _muted_color(rng)
    background = c0[:, None, None] * (1 - t) + c1[:, None, None] * t
    image = background.copy()

    n_obj = int(rng.integers(1, 4))
    union = np.zeros((size, size), dtype=bool)
    objects, colors = [], []
    for _ in range(n_obj):
        for _ in range(MAX_RETRIES):
            a = rng.uniform(0.12, 0.26) * size
            b = rng.uniform(0.6, 1.0) * a
            theta = rng.uniform(0, np.pi)
            cy, cx = rng.uniform(a + 2, size - a - 2, 2)
            m = ellipse_mask(size, cy, cx, a, b, theta)
            if (m & dilate(union, 3)).any() or erode(m, 1).sum() < 60:
                continue
            local = background[:, m].mean(axis=1)
            for _ in range(MAX_RETRIES):
                col = _vivid_color(rng)
                if np.linalg.norm(col - local) >= MIN_COLOR_DIST and \
                        all(np.linalg.norm(col - c) >= MIN_COLOR_DIST for c in colors):
                    break
            else:
                continue
            break
        else:
            raise PlacementError(f"could not place object {len(objects) + 1} of {n_obj}")
        image[:, m] = col[:, None]
        union |= m
        objects.append(m)
        colors.append(col)

    image = np.clip(image + rng.normal(0.0, NOISE_SIGMA, image.shape), 0.0, 1.0)
    image = np.round(image * 255.0) / 255.0  # what the 8-bit file will hold

    scribble = np.zeros((size, size), dtype=np.uint8)
    for m in objects:
        frac = rng.uniform(COVERAGE[0] + 0.01, COVERAGE[1] - 0.01)
        target = int(np.ceil(frac * m.sum()))
        stroke = _stroke(rng, erode(m, 1), target)
        scribble[stroke] = Label.FOREGROUND
    bg = _background_stroke(rng, ~dilate(union, 2), min_pixels=max(20, size // 2))
    scribble[bg] = Label.BACKGROUND
    return Sample(image, scribble, union.astype(np.uint8), sample_id)


def generate_sample(seed: int, index: int, size: int) -> Sample:
    """Sample ``index`` of the dataset keyed by ``seed``; retries placement with fresh sub-seeds."""
    for attempt in range(MAX_RETRIES):
        rng = np.random.default_rng([seed, index, attempt])
        try:
            return synth_sample(rng, size, f"{index:05d}")
        except PlacementError as exc:
            log.warning("sample %d attempt %d skipped: %s; regenerating", index, attempt, exc)
    raise PlacementError(f"sample {index}: placement failed {MAX_RETRIES} times")


def synth_generate(out_dir, count: int, size: int, seed: int) -> Path:
    """Write ``count`` samples plus ``manifest.tsv`` under ``out_dir``; returns the manifest path."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if size % 16:
        raise ValueError(f"size must be divisible by 16, got {size}")
    out = Path(out_dir)
    rows = []
    for i in range(count):
        s = generate_sample(seed, i, size)
        img, scr, msk = f"images/{s.id}.ppm", f"scribbles/{s.id}.pgm", f"masks/{s.id}.pgm"
        save_image(out / img, s.image)
        save_scribble(out / scr, s.scribble)
        save_mask(out / msk, s.full_mask)
        rows.append((img, scr, msk))
    manifest = out / "manifest.tsv"
    write_manifest(manifest, rows)
    return manifest
