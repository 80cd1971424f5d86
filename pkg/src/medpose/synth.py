"""Deterministic synthetic landmark datasets made of distinguishable blobs."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Optional

import numpy as np

from .core import (PHYSICAL, DatasetManifest, ImageRecord, ImageSpec, LandmarkSet,
                   SpacingModel, save_manifest)
from .images import save_gray8


class PlacementError(ValueError):
    pass


def blob_sigma(i: int) -> float:
    return 1.5 + 0.75 * (i % 3)


def _geometry(n: int, size: tuple[int, int]):
    smax = max(blob_sigma(i) for i in range(n))
    margin = math.ceil(3 * smax) + 1
    sep = 4 * smax + 2
    jitter = 0.06 * min(size)
    return margin + jitter, sep + 2 * math.sqrt(2) * jitter, jitter


def _capacity(n: int, h: int, w: int) -> int:
    margin, sep, _ = _geometry(n, (h, w))
    span_x, span_y = w - 1 - 2 * margin, h - 1 - 2 * margin
    if span_x < 0 or span_y < 0:
        return 0
    return (int(span_x // sep) + 1) * (int(span_y // sep) + 1)


def minimum_size(n: int) -> int:
    s = 8
    while _capacity(n, s, s) < n:
        s += 1
    return s


def _template(rng: np.random.Generator, n: int, h: int, w: int) -> np.ndarray:
    margin, sep, _ = _geometry(n, (h, w))
    lo = np.array([margin, margin])
    hi = np.array([w - 1 - margin, h - 1 - margin])
    for _ in range(200):
        pts = []
        for _ in range(n):
            for _ in range(500):
                p = rng.uniform(lo, hi)
                if all(math.dist(p, q) >= sep for q in pts):
                    pts.append(p)
                    break
            else:
                break
        if len(pts) == n:
            return np.array(pts)
    # dense request: fall back to a shuffled lattice, always feasible by the capacity check
    nx = int((hi[0] - lo[0]) // sep) + 1
    ny = int((hi[1] - lo[1]) // sep) + 1
    cells = rng.permutation(nx * ny)[:n]
    return np.stack([lo[0] + (cells % nx) * sep, lo[1] + (cells // nx) * sep], axis=1).astype(float)


def render(points: np.ndarray, size: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    h, w = size
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    gx, gy = rng.uniform(-0.08, 0.08, size=2)
    img = 0.15 + gx * (xs / w - 0.5) + gy * (ys / h - 0.5)
    img = img + rng.normal(0.0, 0.02, size=(h, w))
    n = len(points)
    for i, (cx, cy) in enumerate(points):
        s = blob_sigma(i)
        amp = 0.85 - 0.4 * i / max(n - 1, 1)
        r2 = (xs - cx) ** 2 + (ys - cy) ** 2
        blob = np.exp(-r2 / (2 * s * s))
        if i % 2:
            # odd landmarks are rings so neighbouring indices differ in shape too
            blob = blob - np.exp(-r2 / (2 * (0.45 * s) ** 2))
        img = img + amp * blob
    return np.round(np.clip(img, 0, 1) * 255).astype(np.uint8)


def synth_generate(seed: int, count: int, n: int, size: tuple[int, int] = (64, 64),
                   name: str = "synth", patients: Optional[int] = None,
                   thresholds=(1.0, 2.0, 4.0)):
    """Generate ``count`` images with ``n`` blob landmarks each.

    Returns ``(manifest, images)`` where images are uint8 arrays in manifest
    order. Layouts share a per-seed template jittered per image.
    """
    if count < 1 or n < 1:
        raise ValueError("count and landmark number must be >= 1")
    h, w = size
    if _capacity(n, h, w) < n:
        need = minimum_size(n)
        raise PlacementError(
            f"cannot place {n} non-overlapping landmarks in {h}x{w}; "
            f"need at least {need}x{need}")
    rng = np.random.default_rng(seed)
    base = _template(rng, n, h, w)
    _, _, jitter = _geometry(n, size)
    spacing = SpacingModel(PHYSICAL, mm_per_px=(1.0, 1.0))
    records, images = [], []
    for k in range(count):
        pts = base + rng.uniform(-jitter, jitter, size=base.shape)
        images.append(render(pts, size, rng))
        pid = f"P{k % patients:03d}" if patients else f"P{k:03d}"
        records.append(ImageRecord(
            ImageSpec(f"img_{k:04d}.png", w, h, spacing),
            LandmarkSet.visible(pts), pid))
    manifest = DatasetManifest(name=name, landmark_count=n, images=tuple(records),
                               sdr_thresholds=tuple(thresholds), threshold_unit="mm")
    return manifest, images


def write_dataset(out_dir, manifest: DatasetManifest, images) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for rec, img in zip(manifest.images, images):
        save_gray8(img, out / rec.image.path)
    path = out / "manifest.json"
    save_manifest(manifest, path)
    return path
