"""Keypoint-aware augmentation: horizontal flip, photometric jitter, coarse dropout."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .core import LandmarkSet


@dataclass
class PhotometricConfig:
    brightness_delta: float = 32 / 255
    contrast_range: tuple[float, float] = (0.75, 1.25)
    prob: float = 0.5


@dataclass
class DropoutConfig:
    max_holes: int = 4
    hole_size: tuple[float, float] = (0.05, 0.15)
    prob: float = 0.5


@dataclass
class AugmentConfig:
    flip_prob: float = 0.5
    photometric: PhotometricConfig = field(default_factory=PhotometricConfig)
    coarse_dropout: DropoutConfig = field(default_factory=DropoutConfig)
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.photometric, dict):
            self.photometric = PhotometricConfig(**self.photometric)
        if isinstance(self.coarse_dropout, dict):
            self.coarse_dropout = DropoutConfig(**self.coarse_dropout)
        ph, cd = self.photometric, self.coarse_dropout
        for p in (self.flip_prob, ph.prob, cd.prob):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probability {p} outside [0, 1]")
        lo, hi = ph.contrast_range
        if not 0 < lo <= hi:
            raise ValueError(f"contrast range {ph.contrast_range} must be positive and ordered")
        if ph.brightness_delta < 0:
            raise ValueError("brightness_delta must be >= 0")
        lo, hi = cd.hole_size
        if not 0 < lo <= hi <= 1:
            raise ValueError(f"hole size range {cd.hole_size} must lie in (0, 1] and be ordered")
        if cd.max_holes < 1:
            raise ValueError("max_holes must be >= 1")

    @classmethod
    def disabled(cls, seed: int = 0) -> "AugmentConfig":
        return cls(0.0, PhotometricConfig(prob=0.0), DropoutConfig(prob=0.0), seed)

    def to_dict(self) -> dict:
        return asdict(self)


def sample_rng(seed: int, *key: int) -> np.random.Generator:
    """Counter-based stream for one sample, independent of iteration order."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *key])))


def flip_permutation(n: int, flip_pairs: Sequence[tuple[int, int]]) -> np.ndarray:
    perm = np.arange(n)
    for i, j in flip_pairs:
        perm[i], perm[j] = j, i
    return perm


def flip_h(img: np.ndarray, lms: LandmarkSet, flip_pairs=()) -> tuple[np.ndarray, LandmarkSet]:
    """Mirror about the vertical axis; x' = (width - 1) - x, paired indices swapped."""
    width = img.shape[-1]
    out = img[..., ::-1].copy()
    pts = lms.points.copy()
    pts[:, 0] = (width - 1) - pts[:, 0]
    perm = flip_permutation(len(lms), flip_pairs)
    return out, LandmarkSet(pts[perm], lms.visibility[perm])


def adjust_brightness(img, delta):
    return np.clip(img + delta, 0.0, 1.0)


def adjust_contrast(img, factor):
    mean = img.mean()
    return np.clip(mean + factor * (img - mean), 0.0, 1.0)


def photometric(img: np.ndarray, rng: np.random.Generator,
                cfg: PhotometricConfig = PhotometricConfig()) -> np.ndarray:
    """Random brightness shift, then contrast scaling about the mean; result in [0, 1]."""
    out = img
    if rng.random() < cfg.prob:
        out = adjust_brightness(out, rng.uniform(-cfg.brightness_delta, cfg.brightness_delta))
    if rng.random() < cfg.prob:
        out = adjust_contrast(out, rng.uniform(*cfg.contrast_range))
    return np.clip(out, 0.0, 1.0).astype(img.dtype, copy=False)


def fill_holes(img: np.ndarray, holes) -> np.ndarray:
    """Fill (y0, x0, h, w) rectangles with the mean of the untouched image."""
    out = img.copy()
    mean = img.mean(dtype=np.float64)
    for y0, x0, h, w in holes:
        out[y0:y0 + h, x0:x0 + w] = mean
    return out


def coarse_dropout(img: np.ndarray, rng: np.random.Generator,
                   cfg: DropoutConfig = DropoutConfig()):
    if rng.random() >= cfg.prob:
        return img, []
    H, W = img.shape[-2:]
    side = min(H, W)
    holes = []
    for _ in range(int(rng.integers(1, cfg.max_holes + 1))):
        hh = max(1, int(round(rng.uniform(*cfg.hole_size) * side)))
        hw = max(1, int(round(rng.uniform(*cfg.hole_size) * side)))
        y0 = int(rng.integers(0, H - hh + 1))
        x0 = int(rng.integers(0, W - hw + 1))
        holes.append((y0, x0, hh, hw))
    return fill_holes(img, holes), holes


def compose(cfg: AugmentConfig, img: np.ndarray, lms: LandmarkSet,
            rng: np.random.Generator, flip_pairs=()):
    """flip -> photometric -> coarse dropout, drawing only from ``rng``."""
    if rng.random() < cfg.flip_prob:
        img, lms = flip_h(img, lms, flip_pairs)
    img = photometric(img, rng, cfg.photometric)
    img, _ = coarse_dropout(img, rng, cfg.coarse_dropout)
    return img, lms
