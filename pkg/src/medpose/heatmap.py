"""Gaussian heatmap targets, quarter-offset decoding and the keypoint MSE loss."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import LandmarkSet

DEFAULT_SIGMA = 2.0


@dataclass(frozen=True)
class GaussianSpec:
    sigma: float = DEFAULT_SIGMA

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")


@dataclass
class HeatmapStack:
    data: np.ndarray                       # (N, h, w)
    stride: float = 4.0
    target_weight: Optional[np.ndarray] = field(default=None)

    @property
    def shape(self):
        return self.data.shape


def encode(gt: LandmarkSet, spec: GaussianSpec, grid: tuple[int, int], stride: float,
           dtype=np.float32) -> HeatmapStack:
    """Render one peak-1 Gaussian per landmark on an (h, w) grid.

    Invisible landmarks, and visible ones whose centre lies more than
    3 sigma outside the grid, get an all-zero channel and weight 0.
    """
    h, w = grid
    if h < 1 or w < 1:
        raise ValueError(f"grid must be at least 1x1, got {grid}")
    if not stride > 0:
        raise ValueError("stride must be positive")
    n = len(gt)
    centers = gt.points / stride
    u, v = centers[:, 0], centers[:, 1]
    reach = 3.0 * spec.sigma
    on_grid = (u > -reach) & (u < w - 1 + reach) & (v > -reach) & (v < h - 1 + reach)
    weight = (gt.visibility & on_grid).astype(dtype)

    cols = np.arange(w, dtype=np.float64)
    rows = np.arange(h, dtype=np.float64)
    gx = np.exp(-((cols[None, :] - u[:, None]) ** 2) / (2 * spec.sigma ** 2))
    gy = np.exp(-((rows[None, :] - v[:, None]) ** 2) / (2 * spec.sigma ** 2))
    data = gy[:, :, None] * gx[:, None, :]
    data *= weight[:, None, None]
    return HeatmapStack(data.astype(dtype).reshape(n, h, w), float(stride), weight)


def _quarter_shift(line: np.ndarray, idx: int) -> float:
    if idx <= 0 or idx >= len(line) - 1:
        return 0.0
    left, right = line[idx - 1], line[idx + 1]
    if right > left:
        return 0.25
    if left > right:
        return -0.25
    return 0.0


def decode(pred: HeatmapStack) -> tuple[LandmarkSet, np.ndarray]:
    """Argmax per channel with a quarter-cell shift toward the larger neighbour."""
    data = np.asarray(pred.data)
    n, h, w = data.shape
    flat = data.reshape(n, -1)
    # np.argmax returns the first maximum, i.e. smallest row-major index on ties
    best = np.argmax(flat, axis=1)
    conf = flat[np.arange(n), best].astype(np.float64)
    pts = np.empty((n, 2))
    for i, k in enumerate(best):
        r, c = divmod(int(k), w)
        dx = _quarter_shift(data[i, r, :], c)
        dy = _quarter_shift(data[i, :, c], r)
        pts[i] = ((c + dx) * pred.stride, (r + dy) * pred.stride)
    return LandmarkSet(pts, np.ones(n, dtype=bool)), conf


def _check(pred, gt, target_weight):
    p = np.asarray(getattr(pred, "data", pred))
    g = np.asarray(getattr(gt, "data", gt))
    if p.shape != g.shape:
        raise ValueError(f"heatmap shape mismatch: {p.shape} vs {g.shape}")
    w = np.ones(p.shape[0]) if target_weight is None else np.asarray(target_weight)
    if w.shape != (p.shape[0],):
        raise ValueError(f"target_weight must have shape ({p.shape[0]},), got {w.shape}")
    return p, g, w


def keypoint_mse(pred, gt, target_weight=None) -> float:
    """(1/N) * sum_i w_i * ||pred_i - gt_i||^2 over an (N, h, w) stack."""
    p, g, w = _check(pred, gt, target_weight)
    diff = (p - g).reshape(p.shape[0], -1)
    per_channel = np.einsum("ij,ij->i", diff, diff)
    return float(np.dot(w.astype(per_channel.dtype), per_channel) / p.shape[0])


def keypoint_mse_grad(pred, gt, target_weight=None) -> np.ndarray:
    p, g, w = _check(pred, gt, target_weight)
    scale = (2.0 / p.shape[0]) * w.astype(p.dtype)
    return scale[:, None, None] * (p - g)
