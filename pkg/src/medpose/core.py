"""Landmark domain types, coordinate transforms, spacing and manifest I/O."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

PHYSICAL = "physical"
LANDMARK_NORMALIZED = "landmark_normalized"
PIXEL = "pixel"
SPACING_MODES = (PHYSICAL, LANDMARK_NORMALIZED, PIXEL)

# Returned by effective_spacing for pixel-unit datasets.
PIXEL_UNIT = None


class ManifestError(ValueError):
    """Raised when a manifest cannot be parsed or violates an invariant."""


class SpacingError(ValueError):
    pass


@dataclass(frozen=True)
class SpacingModel:
    mode: str = PIXEL
    mm_per_px: Optional[tuple[float, float]] = None
    norm_rule: Optional[tuple[int, int, float]] = None

    def __post_init__(self):
        if self.mode not in SPACING_MODES:
            raise ValueError(f"unknown spacing mode {self.mode!r}")
        if self.mode == PHYSICAL:
            if self.mm_per_px is None or len(self.mm_per_px) != 2:
                raise ValueError("physical spacing needs (sx, sy)")
            sx, sy = self.mm_per_px
            if not (sx > 0 and sy > 0):
                raise ValueError(f"physical spacing must be positive, got {self.mm_per_px}")
        elif self.mode == LANDMARK_NORMALIZED:
            if self.norm_rule is None:
                raise ValueError("landmark_normalized spacing needs (a, b, distance_mm)")
            a, b, dist = self.norm_rule
            if a == b:
                raise ValueError("normalization landmarks must be distinct")
            if not dist > 0:
                raise ValueError("normalization distance must be positive")

    @property
    def unit(self) -> str:
        return "px" if self.mode == PIXEL else "mm"

    @classmethod
    def from_json(cls, obj: dict) -> "SpacingModel":
        mode = obj.get("mode")
        if mode == PHYSICAL:
            sx, sy = obj["mm_per_px"]
            return cls(PHYSICAL, mm_per_px=(float(sx), float(sy)))
        if mode == LANDMARK_NORMALIZED:
            return cls(LANDMARK_NORMALIZED,
                       norm_rule=(int(obj["a"]), int(obj["b"]), float(obj["distance_mm"])))
        if mode == PIXEL:
            return cls(PIXEL)
        raise ValueError(f"unknown spacing mode {mode!r}")

    def to_json(self) -> dict:
        if self.mode == PHYSICAL:
            return {"mode": PHYSICAL, "mm_per_px": list(self.mm_per_px)}
        if self.mode == LANDMARK_NORMALIZED:
            a, b, d = self.norm_rule
            return {"mode": LANDMARK_NORMALIZED, "a": a, "b": b, "distance_mm": d}
        return {"mode": PIXEL}


@dataclass(frozen=True)
class ImageSpec:
    path: str
    width: int
    height: int
    spacing: SpacingModel = field(default_factory=SpacingModel)

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image size must be >= 1, got {self.width}x{self.height}")


@dataclass(frozen=True, eq=False)
class LandmarkSet:
    """N landmark coordinates (x right, y down, pixel centers on integers)."""

    points: np.ndarray
    visibility: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64).reshape(-1, 2)
        vis = np.array(self.visibility, dtype=bool).reshape(-1)
        if len(pts) != len(vis):
            raise ValueError(f"{len(pts)} points but {len(vis)} visibility flags")
        pts.flags.writeable = False
        vis.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "visibility", vis)

    @classmethod
    def visible(cls, points) -> "LandmarkSet":
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        return cls(pts, np.ones(len(pts), dtype=bool))

    def __len__(self):
        return len(self.points)

    def __eq__(self, other):
        if not isinstance(other, LandmarkSet):
            return NotImplemented
        return (np.array_equal(self.points, other.points)
                and np.array_equal(self.visibility, other.visibility))

    def in_bounds(self, width: float, height: float) -> np.ndarray:
        x, y = self.points[:, 0], self.points[:, 1]
        return (x >= 0) & (x < width) & (y >= 0) & (y < height)


@dataclass(frozen=True)
class ImageRecord:
    image: ImageSpec
    landmarks: LandmarkSet
    patient_id: str


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    landmark_count: int
    images: tuple[ImageRecord, ...]
    flip_pairs: tuple[tuple[int, int], ...] = ()
    sdr_thresholds: tuple[float, ...] = ()
    threshold_unit: str = "mm"
    root: Path = Path(".")

    def __post_init__(self):
        object.__setattr__(self, "images", tuple(self.images))
        object.__setattr__(self, "flip_pairs", tuple(tuple(p) for p in self.flip_pairs))
        object.__setattr__(self, "sdr_thresholds", tuple(float(t) for t in self.sdr_thresholds))
        validate_manifest(self)

    @property
    def patients(self) -> list[str]:
        seen = {}
        for rec in self.images:
            seen.setdefault(rec.patient_id, None)
        return list(seen)

    def image_path(self, index: int) -> Path:
        return Path(self.root) / self.images[index].image.path

    def subset(self, indices: Sequence[int], name: Optional[str] = None) -> "DatasetManifest":
        return DatasetManifest(
            name=name or self.name,
            landmark_count=self.landmark_count,
            images=tuple(self.images[i] for i in indices),
            flip_pairs=self.flip_pairs,
            sdr_thresholds=self.sdr_thresholds,
            threshold_unit=self.threshold_unit,
            root=self.root,
        )

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "landmark_count": self.landmark_count,
            "sdr_thresholds": {"unit": self.threshold_unit, "values": list(self.sdr_thresholds)},
            "flip_pairs": [list(p) for p in self.flip_pairs],
            "images": [
                {
                    "path": rec.image.path,
                    "width": rec.image.width,
                    "height": rec.image.height,
                    "patient_id": rec.patient_id,
                    "spacing": rec.image.spacing.to_json(),
                    "landmarks": rec.landmarks.points.tolist(),
                    "visibility": rec.landmarks.visibility.tolist(),
                }
                for rec in self.images
            ],
        }


def validate_manifest(m: DatasetManifest) -> None:
    n = m.landmark_count
    if not isinstance(n, int) or n < 1:
        raise ManifestError(f"landmark_count must be a positive integer, got {n!r}")
    seen = set()
    for pair in m.flip_pairs:
        if len(pair) != 2:
            raise ManifestError(f"flip pair {pair} must have two indices")
        for idx in pair:
            if not 0 <= idx < n:
                raise ManifestError(f"flip pair index {idx} out of range [0, {n})")
            if idx in seen:
                raise ManifestError(f"flip pair index {idx} appears more than once")
            seen.add(idx)
    t = m.sdr_thresholds
    if any(v <= 0 for v in t):
        raise ManifestError("sdr thresholds must be positive")
    if any(b <= a for a, b in zip(t, t[1:])):
        raise ManifestError(f"sdr thresholds must be strictly increasing, got {list(t)}")
    if m.threshold_unit not in ("mm", "px"):
        raise ManifestError(f"threshold unit must be 'mm' or 'px', got {m.threshold_unit!r}")
    for i, rec in enumerate(m.images):
        lms, spec = rec.landmarks, rec.image
        if len(lms) != n:
            raise ManifestError(f"image {i}: {len(lms)} landmarks, expected {n}")
        inside = lms.in_bounds(spec.width, spec.height)
        bad = np.flatnonzero(lms.visibility & ~inside)
        if bad.size:
            raise ManifestError(f"image {i}: visible landmark {int(bad[0])} outside the image")
        if spec.spacing.unit != m.threshold_unit:
            raise ManifestError(
                f"image {i}: spacing unit {spec.spacing.unit!r} does not match "
                f"threshold unit {m.threshold_unit!r}")
        if spec.spacing.mode == LANDMARK_NORMALIZED:
            a, b, _ = spec.spacing.norm_rule
            if not (0 <= a < n and 0 <= b < n):
                raise ManifestError(f"image {i}: normalization landmarks ({a}, {b}) out of range")
        if not rec.patient_id:
            raise ManifestError(f"image {i}: empty patient_id")


def parse_manifest(obj: dict, root: Path = Path(".")) -> DatasetManifest:
    try:
        images = []
        for i, item in enumerate(obj["images"]):
            try:
                spacing = SpacingModel.from_json(item.get("spacing", {"mode": PIXEL}))
                spec = ImageSpec(item["path"], int(item["width"]), int(item["height"]), spacing)
            except (ValueError, TypeError) as exc:
                raise ManifestError(f"image {i}: {exc}") from exc
            points = item["landmarks"]
            vis = item.get("visibility", [True] * len(points))
            if len(vis) != len(points):
                raise ManifestError(f"image {i}: {len(points)} landmarks but {len(vis)} visibility flags")
            lms = LandmarkSet(np.asarray(points, dtype=np.float64).reshape(-1, 2), vis)
            images.append(ImageRecord(spec, lms, str(item.get("patient_id") or item["path"])))
        thresholds = obj.get("sdr_thresholds", {"unit": "mm", "values": []})
        return DatasetManifest(
            name=str(obj["name"]),
            landmark_count=obj["landmark_count"],
            images=tuple(images),
            flip_pairs=tuple(tuple(int(v) for v in p) for p in obj.get("flip_pairs", [])),
            sdr_thresholds=tuple(float(v) for v in thresholds["values"]),
            threshold_unit=thresholds["unit"],
            root=Path(root),
        )
    except KeyError as exc:
        raise ManifestError(f"missing field {exc.args[0]!r}") from exc


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        obj = json.loads(path.read_bytes().decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ManifestError(f"{path}: not a valid JSON manifest ({exc})") from exc
    if not isinstance(obj, dict):
        raise ManifestError(f"{path}: manifest must be a JSON object")
    return parse_manifest(obj, root=path.parent)


def save_manifest(m: DatasetManifest, path) -> None:
    Path(path).write_text(json.dumps(m.to_json(), indent=1) + "\n", encoding="utf-8")


# -- transforms -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class AffineTransform:
    """2x3 matrix taking original-image coordinates to model-input coordinates."""

    matrix: np.ndarray

    def __post_init__(self):
        mat = np.array(self.matrix, dtype=np.float64).reshape(2, 3)
        if abs(np.linalg.det(mat[:, :2])) == 0.0:
            raise np.linalg.LinAlgError("affine transform is singular")
        mat.flags.writeable = False
        object.__setattr__(self, "matrix", mat)

    @classmethod
    def identity(cls) -> "AffineTransform":
        return cls(np.eye(2, 3))

    @classmethod
    def scale(cls, sx: float, sy: float) -> "AffineTransform":
        return cls(np.array([[sx, 0.0, 0.0], [0.0, sy, 0.0]]))

    def __call__(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        return pts @ self.matrix[:, :2].T + self.matrix[:, 2]

    def compose(self, other: "AffineTransform") -> "AffineTransform":
        """Return self after other."""
        a = np.vstack([self.matrix, [0, 0, 1]])
        b = np.vstack([other.matrix, [0, 0, 1]])
        return AffineTransform((a @ b)[:2])


def full_image_transform(spec: ImageSpec, input_size: tuple[int, int]) -> AffineTransform:
    hin, win = input_size
    if hin < 1 or win < 1:
        raise ValueError(f"input size must be >= 1, got {input_size}")
    return AffineTransform.scale(win / spec.width, hin / spec.height)


def apply_transform(t: AffineTransform, pts: LandmarkSet,
                    bounds: Optional[tuple[float, float]] = None) -> LandmarkSet:
    """Map points through ``t``.

    ``bounds`` is the (width, height) of the target rectangle; visible points
    landing outside it are marked invisible rather than clamped.
    """
    mapped = t(pts.points)
    vis = pts.visibility.copy()
    if bounds is not None:
        w, h = bounds
        inside = (mapped[:, 0] >= 0) & (mapped[:, 0] < w) & (mapped[:, 1] >= 0) & (mapped[:, 1] < h)
        vis &= inside
    else:
        vis &= (mapped[:, 0] >= 0) & (mapped[:, 1] >= 0)
    return LandmarkSet(mapped, vis)


def invert_transform(t: AffineTransform) -> AffineTransform:
    lin = t.matrix[:, :2]
    if np.linalg.det(lin) == 0.0:
        raise np.linalg.LinAlgError("cannot invert a singular transform")
    inv = np.linalg.inv(lin)
    return AffineTransform(np.hstack([inv, (-inv @ t.matrix[:, 2])[:, None]]))


def effective_spacing(spec: ImageSpec, gt: LandmarkSet):
    """mm-per-pixel (sx, sy) for an image, or PIXEL_UNIT for pixel datasets."""
    sp = spec.spacing
    if sp.mode == PHYSICAL:
        return tuple(sp.mm_per_px)
    if sp.mode == PIXEL:
        return PIXEL_UNIT
    a, b, dist_mm = sp.norm_rule
    if not (gt.visibility[a] and gt.visibility[b]):
        raise SpacingError(f"normalization landmarks {a}, {b} must both be visible")
    d = math.dist(gt.points[a], gt.points[b])
    if d == 0:
        raise SpacingError(f"normalization landmarks {a} and {b} coincide")
    s = dist_mm / d
    return (s, s)
