"""Radial error, MRE, SDR and report serialization."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import LandmarkSet


class UnitMismatch(ValueError):
    pass


@dataclass
class RadialErrors:
    errors: np.ndarray          # (images, N)
    mask: np.ndarray            # (images, N) bool, True where GT was visible
    unit: str = "mm"

    @property
    def evaluated(self) -> np.ndarray:
        return self.errors[self.mask]

    def extend(self, other: "RadialErrors") -> "RadialErrors":
        if other.unit != self.unit:
            raise UnitMismatch(f"cannot pool {self.unit} and {other.unit} errors")
        return RadialErrors(np.vstack([self.errors, other.errors]),
                            np.vstack([self.mask, other.mask]), self.unit)

    @classmethod
    def concat(cls, parts: Sequence["RadialErrors"]) -> "RadialErrors":
        out = parts[0]
        for p in parts[1:]:
            out = out.extend(p)
        return out


def radial_errors(pred: LandmarkSet, gt: LandmarkSet, spacing) -> RadialErrors:
    """Per-landmark Euclidean error; ``spacing`` is (sx, sy) mm/px or None for px."""
    if len(pred) != len(gt):
        raise ValueError(f"prediction has {len(pred)} landmarks, ground truth {len(gt)}")
    d = pred.points - gt.points
    if spacing is None:
        e, unit = np.hypot(d[:, 0], d[:, 1]), "px"
    else:
        sx, sy = spacing
        e, unit = np.hypot(sx * d[:, 0], sy * d[:, 1]), "mm"
    mask = gt.visibility.copy()
    e = np.where(mask, e, 0.0)
    return RadialErrors(e[None, :], mask[None, :], unit)


def mre(errs: RadialErrors) -> tuple[float, float]:
    """Mean and population std over all evaluated landmarks, pooled across images."""
    e = errs.evaluated
    if e.size == 0:
        raise ValueError("no evaluated landmarks")
    return float(e.mean()), float(e.std())


def sdr(errs: RadialErrors, threshold: float, unit: Optional[str] = None) -> float:
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    if unit is not None and unit != errs.unit:
        raise UnitMismatch(f"threshold in {unit} but errors in {errs.unit}")
    e = errs.evaluated
    if e.size == 0:
        raise ValueError("no evaluated landmarks")
    return 100.0 * np.count_nonzero(e <= threshold) / e.size


def sdr_avg(sdrs: Sequence[float]) -> float:
    if len(sdrs) == 0:
        raise ValueError("sdr_avg of an empty list")
    return float(np.mean(np.asarray(sdrs, dtype=np.float64)))


@dataclass
class MetricsReport:
    dataset: str
    unit: str
    mre_mean: float
    mre_std: float
    sdr: list[tuple[float, float]] = field(default_factory=list)
    sdr_avg: float = float("nan")
    n_images: int = 0
    n_landmarks: int = 0

    def to_json(self) -> dict:
        return {
            "dataset": self.dataset,
            "unit": self.unit,
            "mre": {"mean": self.mre_mean, "std": self.mre_std},
            "sdr": [{"threshold": t, "value": v} for t, v in self.sdr],
            "sdr_avg": self.sdr_avg,
            "n_images": self.n_images,
            "n_landmarks": self.n_landmarks,
        }

    @classmethod
    def from_json(cls, d: dict) -> "MetricsReport":
        return cls(d["dataset"], d["unit"], d["mre"]["mean"], d["mre"]["std"],
                   [(s["threshold"], s["value"]) for s in d["sdr"]], d["sdr_avg"],
                   d["n_images"], d["n_landmarks"])


def build_report(dataset: str, errs: RadialErrors, thresholds: Sequence[float],
                 unit: Optional[str] = None) -> MetricsReport:
    unit = unit or errs.unit
    mean, std = mre(errs)
    rates = [(float(t), sdr(errs, t, unit)) for t in thresholds]
    avg = sdr_avg([v for _, v in rates]) if rates else float("nan")
    return MetricsReport(dataset, errs.unit, mean, std, rates, avg,
                         int(errs.errors.shape[0]), int(errs.evaluated.size))


def _label(t: float, unit: str) -> str:
    return f"{t:g} {unit}"


def format_table(r: MetricsReport) -> str:
    cols = [_label(t, r.unit) for t, _ in r.sdr] + ["SDR_avg", f"MRE({r.unit})"]
    vals = [f"{v:.2f}" for _, v in r.sdr] + [f"{r.sdr_avg:.2f}",
                                             f"{r.mre_mean:.3f}±{r.mre_std:.3f}"]
    widths = [max(len(c), len(v)) for c, v in zip(cols, vals)]
    head = " | ".join(c.rjust(w) for c, w in zip(cols, widths))
    row = " | ".join(v.rjust(w) for v, w in zip(vals, widths))
    return (f"{r.dataset} ({r.n_images} images, {r.n_landmarks} landmarks)\n"
            f"{head}\n{'-' * len(head)}\n{row}\n")


def format_csv(r: MetricsReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["dataset", "unit", *[f"sdr@{t:g}" for t, _ in r.sdr], "sdr_avg",
                "mre_mean", "mre_std", "n_images", "n_landmarks"])
    w.writerow([r.dataset, r.unit, *[repr(v) for _, v in r.sdr], repr(r.sdr_avg),
                repr(r.mre_mean), repr(r.mre_std), r.n_images, r.n_landmarks])
    return buf.getvalue()


def emit_report(r: MetricsReport, path, fmt: str = "json") -> Path:
    path = Path(path)
    if fmt == "json":
        text = json.dumps(r.to_json(), indent=2) + "\n"
    elif fmt == "csv":
        text = format_csv(r)
    elif fmt in ("text", "text-table", "txt"):
        text = format_table(r)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    path.write_text(text, encoding="utf-8")
    return path
