"""Training loop, batch schedule, few-shot splits and original-scale evaluation."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from . import model as M
from .augment import compose, sample_rng
from .config import RunConfig
from .core import (DatasetManifest, LandmarkSet, apply_transform, effective_spacing,
                   full_image_transform, invert_transform, load_manifest)
from .heatmap import GaussianSpec, HeatmapStack, decode, encode
from .images import load_gray, warp_to_input
from .metrics import MetricsReport, RadialErrors, build_report, radial_errors
from .optim import OptimState, adamw_step, layerwise_lr

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class TrainHistory:
    loss: list[tuple[int, float]] = field(default_factory=list)
    mre: list[tuple[int, str, float]] = field(default_factory=list)

    def write(self, out_dir) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        hist, losses = out / "history.csv", out / "loss.csv"
        with hist.open("w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["epoch", "split", "mre"])
            w.writerows([(e, s, repr(v)) for e, s, v in self.mre])
        with losses.open("w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["step", "loss"])
            w.writerows([(s, repr(v)) for s, v in self.loss])
        return hist, losses


# -- data -------------------------------------------------------------------

class ImageCache:
    """Loads each manifest image once, as float32 in [0, 1]."""

    def __init__(self):
        self._store = {}

    def get(self, manifest: DatasetManifest, index: int) -> np.ndarray:
        path = manifest.image_path(index)
        key = str(path)
        if key not in self._store:
            img = load_gray(path)
            spec = manifest.images[index].image
            if img.shape != (spec.height, spec.width):
                raise ValueError(f"{path}: image is {img.shape[1]}x{img.shape[0]}, "
                                 f"manifest says {spec.width}x{spec.height}")
            self._store[key] = img
        return self._store[key]


def to_model_input(img: np.ndarray, in_channels: int) -> np.ndarray:
    """Standardise a grayscale image and replicate it to ``in_channels``."""
    x = (img - img.mean()) / (img.std() + 1e-6)
    return np.repeat(x[None].astype(np.float32), in_channels, axis=0)


def prepare(img, lms, spec, cfg: M.ModelConfig):
    """Resize the full image to the model input and map landmarks along."""
    t = full_image_transform(spec, cfg.input_size)
    hin, win = cfg.input_size
    x = to_model_input(warp_to_input(img, t, cfg.input_size), cfg.in_channels)
    lms_in = apply_transform(t, lms, bounds=(win, hin)) if lms is not None else None
    return x, lms_in, t


def multi_dataset_schedule(sizes: Sequence[int], batch_size: int,
                           seed: int) -> Iterator[tuple[int, np.ndarray]]:
    """Yield ``(dataset_index, image_indices)`` forever.

    Each batch comes from one dataset, picked with probability proportional
    to its size; images are drawn without replacement within an epoch.
    """
    if not sizes:
        raise ValueError("need at least one dataset")
    rng = np.random.default_rng(seed)
    sizes = np.asarray(sizes, dtype=np.int64)
    probs = sizes / sizes.sum()
    orders = [rng.permutation(n) for n in sizes]
    cursor = [0] * len(sizes)
    while True:
        d = int(rng.choice(len(sizes), p=probs)) if len(sizes) > 1 else 0
        if cursor[d] >= sizes[d]:
            orders[d] = rng.permutation(sizes[d])
            cursor[d] = 0
        take = orders[d][cursor[d]:cursor[d] + batch_size]
        cursor[d] += len(take)
        yield d, take


def few_shot_split(manifest: DatasetManifest, k_patients: int,
                   seed: int = 0) -> tuple[DatasetManifest, DatasetManifest]:
    """Patient-disjoint split with ``k_patients`` whole patients in the training part."""
    patients = sorted(manifest.patients)
    if k_patients < 1 or len(patients) < k_patients + 1:
        raise ValueError(f"need at least {k_patients + 1} patients for a {k_patients}-patient "
                         f"split, manifest has {len(patients)}")
    rng = np.random.default_rng(seed)
    chosen = {patients[i] for i in rng.permutation(len(patients))[:k_patients]}
    train_idx = [i for i, r in enumerate(manifest.images) if r.patient_id in chosen]
    test_idx = [i for i, r in enumerate(manifest.images) if r.patient_id not in chosen]
    return manifest.subset(train_idx), manifest.subset(test_idx)


# -- evaluation ---------------------------------------------------------------

def predict_heatmaps(model: M.Model, inputs: np.ndarray, dataset: str,
                     batch_size: int = 16) -> np.ndarray:
    outs = [M.forward(model, inputs[i:i + batch_size], dataset)
            for i in range(0, len(inputs), batch_size)]
    return np.concatenate(outs)


def heatmaps_to_landmarks(heatmaps: np.ndarray, stride: float, transform) -> tuple[LandmarkSet, np.ndarray]:
    """Decode one (N, h, w) stack and map it back to original-image coordinates."""
    pred_in, conf = decode(HeatmapStack(heatmaps, stride))
    pts = invert_transform(transform)(pred_in.points)
    return LandmarkSet(pts, pred_in.visibility), conf


def errors_from_heatmaps(heatmaps: np.ndarray, stride: float, manifest: DatasetManifest,
                         input_size) -> RadialErrors:
    parts = []
    for hm, rec in zip(heatmaps, manifest.images):
        t = full_image_transform(rec.image, input_size)
        pred, _ = heatmaps_to_landmarks(hm, stride, t)
        parts.append(radial_errors(pred, rec.landmarks, effective_spacing(rec.image, rec.landmarks)))
    return RadialErrors.concat(parts)


def evaluate(model: M.Model, manifest: DatasetManifest, head: Optional[str] = None,
             thresholds: Optional[Sequence[float]] = None,
             cache: Optional[ImageCache] = None) -> MetricsReport:
    head = head or manifest.name
    if head not in dict(model.config.dataset_heads):
        raise KeyError(f"model has no head for dataset {head!r}")
    cache = cache or ImageCache()
    cfg = model.config
    inputs = np.stack([prepare(cache.get(manifest, i), None, rec.image, cfg)[0]
                       for i, rec in enumerate(manifest.images)])
    heatmaps = predict_heatmaps(model, inputs, head)
    errs = errors_from_heatmaps(heatmaps, model.stride, manifest, cfg.input_size)
    ths = manifest.sdr_thresholds if thresholds is None else thresholds
    return build_report(manifest.name, errs, ths, manifest.threshold_unit)


# -- training -----------------------------------------------------------------

def _lr_table(model: M.Model, opt_cfg) -> dict[str, float]:
    depth = model.config.depth
    return {n: layerwise_lr(n, depth, opt_cfg.base_lr, opt_cfg.decay) for n in model.trainable}


def _make_batch(model, manifest, indices, cache, augment_cfg, seed, step, sigma):
    cfg = model.config
    grid = cfg.heatmap_size
    xs, hms, ws = [], [], []
    for pos, idx in enumerate(indices):
        rec = manifest.images[idx]
        rng = sample_rng(seed, step, pos)
        img, lms = compose(augment_cfg, cache.get(manifest, idx), rec.landmarks, rng,
                           manifest.flip_pairs)
        x, lms_in, _ = prepare(img, lms, rec.image, cfg)
        target = encode(lms_in, GaussianSpec(sigma), grid, model.stride)
        xs.append(x)
        hms.append(target.data)
        ws.append(target.target_weight)
    return np.stack(xs), np.stack(hms), np.stack(ws)


def _prepare_model(cfg: RunConfig, manifests: Sequence[DatasetManifest]) -> M.Model:
    if cfg.base_checkpoint:
        model = M.load_checkpoint(cfg.base_checkpoint)
    else:
        mcfg = M.ModelConfig.from_dict(cfg.model.to_dict())
        if not mcfg.dataset_heads:
            mcfg.dataset_heads = [(m.name, m.landmark_count) for m in manifests]
        model = M.build(mcfg, cfg.seed)
    heads = dict(model.config.dataset_heads)
    for k, m in enumerate(manifests):
        if m.name not in heads:
            model = M.add_dataset_head(model, m.name, m.landmark_count, seed=cfg.seed + 1 + k)
        elif heads[m.name] != m.landmark_count:
            raise ValueError(f"head {m.name!r} predicts {heads[m.name]} landmarks, "
                             f"manifest has {m.landmark_count}")
    if cfg.lora is not None and not model.lora_pairs():
        model = M.lora_inject(model, cfg.lora, seed=cfg.seed)
    mode = cfg.trainable or ("lora_only" if model.lora_pairs() else "full")
    return M.set_trainable(model, mode)


def _mean_mre(model, manifests, cache) -> float:
    return float(np.mean([evaluate(model, m, cache=cache).mre_mean for m in manifests]))


def train(cfg: RunConfig, manifests: Optional[Sequence[DatasetManifest]] = None,
          save: bool = True) -> tuple[M.Model, TrainHistory]:
    if manifests is None:
        manifests = [load_manifest(p) for p in cfg.datasets]
    manifests = list(manifests)
    val_manifests = [load_manifest(p) for p in cfg.val_datasets]
    if cfg.mode == "few_shot":
        train_part, test_part = few_shot_split(manifests[0], cfg.few_shot_patients, cfg.seed)
        manifests, val_manifests = [train_part], [test_part]
    model = _prepare_model(cfg, manifests)
    out_dir = Path(cfg.output_dir)
    opt = cfg.optimizer
    state = OptimState(beta1=opt.betas[0], beta2=opt.betas[1], eps=opt.eps,
                       weight_decay=opt.weight_decay)
    history = TrainHistory()
    cache = ImageCache()
    total = sum(len(m.images) for m in manifests)
    per_epoch = max(1, math.ceil(total / opt.batch_size))
    steps = opt.steps if opt.steps is not None else opt.epochs * per_epoch
    lrs = _lr_table(model, opt)
    schedule = multi_dataset_schedule([len(m.images) for m in manifests], opt.batch_size, cfg.seed)
    if save:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
    best = math.inf
    for step in range(steps):
        d, idx = next(schedule)
        man = manifests[d]
        x, hm, w = _make_batch(model, man, idx, cache, cfg.augment, cfg.seed, step, cfg.sigma)
        loss, grads = M.loss_and_grads(model, x, hm, w, man.name)
        if not math.isfinite(loss):
            if save:
                M.save_checkpoint(model, out_dir / "diverged.ckpt", state)
            raise TrainingDiverged(f"loss became {loss} at step {step}")
        params, state = adamw_step(model.params, grads, state, lrs)
        model = M.Model(model.config, params, model.lora, model.trainable)
        history.loss.append((step, float(loss)))
        done = step + 1
        if done % per_epoch == 0 or done == steps:
            epoch = math.ceil(done / per_epoch)
            if epoch % cfg.val_every and done != steps:
                continue
            train_mre = _mean_mre(model, manifests, cache)
            history.mre.append((epoch, "train", train_mre))
            score = train_mre
            if val_manifests:
                score = _mean_mre(model, val_manifests, cache)
                history.mre.append((epoch, "val", score))
            log.info("epoch %d step %d loss %.5f train MRE %.3f", epoch, done, loss, train_mre)
            if save and score < best:
                M.save_checkpoint(model, out_dir / "best.ckpt")
            best = min(best, score)
    if save:
        M.save_checkpoint(model, out_dir / "last.ckpt", state)
        if not (out_dir / "best.ckpt").exists():
            M.save_checkpoint(model, out_dir / "best.ckpt")
        history.write(out_dir)
    return model, history
