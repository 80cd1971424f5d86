"""Command-line entry point: train, eval, predict, synth, report."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import model as M
from .config import RunConfigError, load_run_config
from .core import ImageSpec, LandmarkSet, ManifestError, load_manifest
from .metrics import emit_report
from .optim import NonFiniteGradient
from .trainer import (TrainingDiverged, evaluate, heatmaps_to_landmarks, predict_heatmaps,
                      prepare, train)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("medpose")


class CliError(Exception):
    def __init__(self, message, code=EXIT_CONFIG, **extra):
        super().__init__(message)
        self.code = code
        self.extra = extra


def _thread_limit():
    n = os.environ.get("MEDPOSE_THREADS")
    if not n:
        return nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=int(n))


# -- commands ---------------------------------------------------------------

def cmd_train(args) -> int:
    try:
        cfg = load_run_config(args.config, args.set or [])
    except FileNotFoundError as exc:
        raise CliError(f"config file not found: {exc.filename}", EXIT_CONFIG,
                       path=str(exc.filename)) from exc
    try:
        cfg.validate(check_paths=True)
    except FileNotFoundError as exc:
        raise CliError(f"path does not exist: {exc.args[0]}", EXIT_CONFIG,
                       path=str(exc.args[0])) from exc
    _, history = train(cfg)
    out = Path(cfg.output_dir)
    summary = {"output_dir": str(out), "steps": len(history.loss),
               "final_loss": history.loss[-1][1] if history.loss else None,
               "checkpoints": ["best.ckpt", "last.ckpt"]}
    print(json.dumps(summary))
    return EXIT_OK


def cmd_eval(args) -> int:
    model = M.load_checkpoint(args.checkpoint)
    manifest = load_manifest(args.manifest)
    head = args.head or manifest.name
    if head not in dict(model.config.dataset_heads):
        raise CliError(f"checkpoint has no head for dataset {head!r}", EXIT_CONFIG,
                       dataset=head)
    thresholds = args.thresholds
    report = evaluate(model, manifest, head=head, thresholds=thresholds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    emit_report(report, out / "report.json", "json")
    emit_report(report, out / "report.txt", "text-table")
    print((out / "report.txt").read_text(), end="")
    return EXIT_OK


def _draw_overlay(gray, pred, gt, path):
    from PIL import Image, ImageDraw
    rgb = Image.fromarray(np.round(np.clip(gray, 0, 1) * 255).astype(np.uint8)).convert("RGB")
    draw = ImageDraw.Draw(rgb)
    r = max(1.5, min(rgb.size) / 100)
    if gt is not None:
        for x, y in gt:
            draw.ellipse([x - r, y - r, x + r, y + r], fill=(0, 255, 0))
    for x, y in pred:
        draw.ellipse([x - r, y - r, x + r, y + r], fill=(255, 0, 0))
    rgb.save(path)


def cmd_predict(args) -> int:
    from .images import load_gray, save_gray8
    model = M.load_checkpoint(args.checkpoint)
    if args.dataset not in dict(model.config.dataset_heads):
        raise CliError(f"checkpoint has no head for dataset {args.dataset!r}", EXIT_CONFIG,
                       dataset=args.dataset)
    try:
        img = load_gray(args.image)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot read image {args.image}: {exc}", EXIT_IO, path=args.image) from exc
    spec = ImageSpec(str(args.image), img.shape[1], img.shape[0])
    x, _, t = prepare(img, None, spec, model.config)
    heatmaps = predict_heatmaps(model, x[None], args.dataset)[0]
    pred, conf = heatmaps_to_landmarks(heatmaps, model.stride, t)
    gt = None
    if args.gt:
        gt = np.asarray(json.loads(Path(args.gt).read_text()), dtype=float).reshape(-1, 2)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.image).stem
    result = {"image": str(args.image), "dataset": args.dataset,
              "landmarks": [{"x": float(px), "y": float(py), "confidence": float(c)}
                            for (px, py), c in zip(pred.points, conf)]}
    (out / f"{stem}_landmarks.json").write_text(json.dumps(result, indent=2) + "\n")
    _draw_overlay(img, pred.points, gt, out / f"{stem}_overlay.png")
    if args.dump_heatmaps:
        for i, ch in enumerate(heatmaps):
            lo, hi = float(ch.min()), float(ch.max())
            save_gray8((ch - lo) / (hi - lo) if hi > lo else np.zeros_like(ch),
                       out / f"{stem}_heatmap_{i:02d}.png")
    print(json.dumps(result))
    return EXIT_OK


def cmd_synth(args) -> int:
    from .synth import synth_generate, write_dataset
    if args.count < 1 or args.landmarks < 1:
        raise CliError("count and landmarks must be >= 1", EXIT_CONFIG)
    manifest, images = synth_generate(args.seed, args.count, args.landmarks,
                                      (args.size[0], args.size[1]), name=args.name,
                                      patients=args.patients)
    path = write_dataset(args.out, manifest, images)
    print(json.dumps({"manifest": str(path), "images": len(images)}))
    return EXIT_OK


def read_history(path) -> dict[str, list[tuple[int, float]]]:
    series: dict[str, list[tuple[int, float]]] = {}
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    if not rows:
        raise CliError(f"{path}: history CSV has no rows", EXIT_CONFIG, path=str(path))
    try:
        for row in rows:
            series.setdefault(row["split"], []).append((int(row["epoch"]), float(row["mre"])))
    except (KeyError, ValueError, TypeError) as exc:
        raise CliError(f"{path}: malformed history CSV ({exc})", EXIT_CONFIG, path=str(path)) from exc
    return series


def cmd_report(args) -> int:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    runs = []
    for item in args.history:
        name, _, path = item.rpartition("=")
        name = name or Path(path).parent.name or Path(path).stem
        runs.append((name, path, read_history(path)))
    fig, ax = plt.subplots(figsize=(6, 4))
    summary = []
    for name, path, series in runs:
        for split, pts in sorted(series.items()):
            ep, mre = zip(*pts)
            label = name if len(series) == 1 else f"{name} ({split})"
            ax.plot(ep, mre, marker="o", markersize=2, label=label)
        key = "val" if "val" in series else sorted(series)[0]
        pts = series[key]
        best = min(pts, key=lambda p: p[1])
        summary.append({"run": name, "split": key, "final_epoch": pts[-1][0],
                        "final_mre": pts[-1][1], "best_epoch": best[0], "best_mre": best[1]})
    ax.set_xlabel("epoch")
    ax.set_ylabel("end-point error (MRE)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(args.out, dpi=120)
    plt.close(fig)
    for s in summary:
        print(f"{s['run']}: final epoch {s['final_epoch']} MRE {s['final_mre']:.3f}; "
              f"best epoch {s['best_epoch']} MRE {s['best_mre']:.3f} ({s['split']})")
    return EXIT_OK


# -- plumbing ---------------------------------------------------------------

def _size(text):
    parts = [int(v) for v in text.lower().split("x")]
    if len(parts) == 1:
        parts = parts * 2
    if len(parts) != 2:
        raise argparse.ArgumentTypeError("size must look like 64 or 64x48 (HxW)")
    return parts


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="medpose", description="Heatmap landmark detection toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train from a JSON run config")
    t.add_argument("config")
    t.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key by dotted path, e.g. optimizer.base_lr=1e-3")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    e.add_argument("checkpoint")
    e.add_argument("manifest")
    e.add_argument("--thresholds", type=float, nargs="+")
    e.add_argument("--head", help="dataset head to use (default: manifest name)")
    e.add_argument("--out", default=".")
    e.set_defaults(func=cmd_eval)

    pr = sub.add_parser("predict", help="predict landmarks for one image")
    pr.add_argument("checkpoint")
    pr.add_argument("image")
    pr.add_argument("dataset")
    pr.add_argument("--gt", help="JSON list of [x, y] ground-truth points to overlay")
    pr.add_argument("--out", default=".")
    pr.add_argument("--dump-heatmaps", action="store_true")
    pr.set_defaults(func=cmd_predict)

    s = sub.add_parser("synth", help="write a synthetic blob dataset")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--count", type=int, default=8)
    s.add_argument("--landmarks", "-n", type=int, default=4)
    s.add_argument("--size", type=_size, default=[64, 64])
    s.add_argument("--patients", type=int)
    s.add_argument("--name", default="synth")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    r = sub.add_parser("report", help="plot epoch-vs-MRE curves from history CSVs")
    r.add_argument("history", nargs="+", help="history.csv or NAME=history.csv")
    r.add_argument("--out", default="convergence.png")
    r.set_defaults(func=cmd_report)
    return p


def _fail(code, exc, **extra) -> int:
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code, **extra}
    print(json.dumps(payload), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit():
            return args.func(args)
    except CliError as exc:
        return _fail(exc.code, exc, **exc.extra)
    except (TrainingDiverged, NonFiniteGradient, FloatingPointError) as exc:
        return _fail(EXIT_RUNTIME, exc)
    except FileNotFoundError as exc:
        return _fail(EXIT_IO, exc, path=str(exc.filename))
    except (RunConfigError, ManifestError, M.ConfigError, M.CheckpointError, KeyError,
            ValueError) as exc:
        return _fail(EXIT_CONFIG, exc)
    except OSError as exc:
        return _fail(EXIT_IO, exc)
    except Exception as exc:  # noqa: BLE001
        return _fail(EXIT_RUNTIME, exc)


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
