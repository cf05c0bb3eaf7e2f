"""Batch command line: ``ki67pi {synth,train,predict,evaluate}``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from . import __version__
from .annotations import Klass, gaussian_encode, load_annotations
from .evaluation import evaluate, write_plots
from .metrics import DEFAULT_MATCH_RADIUS
from .pipeline import predict_image
from .postprocess import DetectionSet
from .synthgen import SynthConfig, generate_dataset, read_manifest, write_dataset
from .tiling import DEFAULT_TILE_SIZE
from .training import TrainConfig, seed_everything, train
from .uvnet import UVNet, UVNetConfig, load_checkpoint, save_checkpoint

log = logging.getLogger("ki67pi")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def load_config(path) -> dict:
    """JSON object with optional sections ``synth``, ``model``, ``train``, ``postprocess``."""
    if path is None:
        return {}
    with open(path) as fh:
        data = json.load(fh)
    unknown = set(data) - {"synth", "model", "train", "postprocess"}
    if unknown:
        raise UsageError(f"{path}: unknown config sections {sorted(unknown)}")
    return data


def prepare_out_dir(out: Path, force: bool) -> Path:
    if out.exists() and any(out.iterdir()) and not force:
        raise UsageError(f"output directory {out} is not empty; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_run_manifest(out: Path, args, inputs) -> None:
    record = {
        "command": args.command,
        "config_path": str(args.config) if getattr(args, "config", None) else None,
        "inputs": [str(p) for p in inputs],
        "output_dir": str(out),
        "seed": getattr(args, "seed", None),
        "version": __version__,
    }
    with open(out / "run.json", "w") as fh:
        json.dump(record, fh, indent=2)


def read_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def cmd_synth(args) -> int:
    if args.n <= 0:
        raise UsageError("--n must be a positive number of images")
    cfg = load_config(args.config)
    synth = dict(cfg.get("synth", {}))
    if args.seed is not None:
        synth["seed"] = args.seed
    synth_config = SynthConfig.from_dict(synth)
    split = TrainConfig(**cfg.get("train", {})).split
    out = prepare_out_dir(Path(args.out), args.force)
    images = generate_dataset(synth_config, args.n)
    manifest = write_dataset(out, images, split, seed=synth_config.seed)
    write_run_manifest(out, args, [])
    print(f"wrote {len(images)} images and {manifest}")
    return EXIT_OK


def _load_split(manifest, split):
    items = []
    for row in read_manifest(manifest):
        if row["split"] != split:
            continue
        image = read_image(row["image"])
        items.append((image, load_annotations(row["annotations"], image.shape[:2])))
    return items


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    train_cfg = dict(cfg.get("train", {}))
    if args.seed is not None:
        train_cfg["seed"] = args.seed
    if args.epochs is not None:
        train_cfg["epochs"] = args.epochs
    if args.deterministic:
        train_cfg["deterministic"] = True
    config = TrainConfig(**train_cfg)
    model_config = UVNetConfig(**cfg.get("model", {}))
    out = prepare_out_dir(Path(args.out), args.force)

    def encode(items):
        return [(img, gaussian_encode(img.shape[:2], lbls, config.sigma)) for img, lbls in items]

    train_set = encode(_load_split(args.manifest, "train"))
    val_set = encode(_load_split(args.manifest, "val"))
    if not train_set:
        raise UsageError(f"{args.manifest} has no training images")
    seed_everything(config.seed, config.deterministic)
    model = UVNet(model_config)
    model, history = train(model, train_set, config, val_set or None, checkpoint_path=out / "checkpoint.pt")
    save_checkpoint(out / "checkpoint.pt", model, epoch=history.best_epoch, val_loss=history.best_val_loss)
    history.to_csv(out / "history.csv")
    write_run_manifest(out, args, [args.manifest])
    print(f"best epoch {history.best_epoch} val loss {history.best_val_loss:.6g}; checkpoint {out / 'checkpoint.pt'}")
    return EXIT_OK


def draw_overlay(image: np.ndarray, dets: DetectionSet, radius: int = 4) -> Image.Image:
    im = Image.fromarray(image).convert("RGB")
    draw = ImageDraw.Draw(im)
    for x, y, klass in dets.detections:
        color = (255, 0, 0) if klass is Klass.KI67_POS else (0, 200, 0)
        draw.ellipse([x - radius, y - radius, x + radius, y + radius], outline=color, width=2)
    return im


def cmd_predict(args) -> int:
    cfg = load_config(args.config)
    if args.deterministic:
        seed_everything(args.seed or 0, True)
    model = load_checkpoint(args.checkpoint)
    detect_params = cfg.get("postprocess", {})
    out = prepare_out_dir(Path(args.out), args.force)
    (out / "detections").mkdir(exist_ok=True)
    if args.overlay:
        (out / "overlays").mkdir(exist_ok=True)
    failures = 0
    rows = []
    for path in map(Path, args.images):
        image_id = path.stem
        try:
            image = read_image(path)
        except (OSError, ValueError) as exc:
            log.error("cannot read %s: %s", path, exc)
            failures += 1
            continue
        _, dets, rec = predict_image(image, model, image_id, args.tile_size, **detect_params)
        dets.to_csv(out / "detections" / f"{image_id}.csv")
        if args.overlay:
            draw_overlay(image, dets).save(out / "overlays" / f"{image_id}.png")
        rows.append(rec)
        pi = "undefined" if rec.pi is None else f"{rec.pi:.4f}"
        print(f"{image_id}: {rec.n_pos} Ki67+, {rec.n_neg} Ki67-, PI {pi}")
    with open(out / "pi.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "n_pos", "n_neg", "pi"])
        for rec in sorted(rows, key=lambda r: r.image_id):
            writer.writerow([rec.image_id, rec.n_pos, rec.n_neg, "" if rec.pi is None else repr(rec.pi)])
    write_run_manifest(out, args, args.images)
    return EXIT_FAILURE if failures else EXIT_OK


def _csv_dir(path) -> dict[str, Path]:
    path = Path(path)
    if not path.is_dir():
        raise UsageError(f"{path} is not a directory")
    return {p.stem: p for p in sorted(path.glob("*.csv"))}


def _read_keyed_csv(path, columns):
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            missing = [c for c in columns if c not in row]
            if missing:
                raise UsageError(f"{path}: missing columns {missing}")
            out[row["image_id"]] = row
    return out


def cmd_evaluate(args) -> int:
    if not (args.gt or args.pi_ranges or args.gt_pi):
        raise UsageError("give at least one of --gt, --pi-ranges, --gt-pi")
    predictions = {}
    for image_id, path in _csv_dir(args.pred).items():
        predictions[image_id] = DetectionSet([(l.x, l.y, l.klass) for l in load_annotations(path)], image_id)
    ground_truth = None
    if args.gt:
        ground_truth = {image_id: load_annotations(p) for image_id, p in _csv_dir(args.gt).items()}
    pi_ranges = None
    if args.pi_ranges:
        rows = _read_keyed_csv(args.pi_ranges, ["image_id", "lo", "hi"])
        pi_ranges = {k: (float(r["lo"]), float(r["hi"])) for k, r in rows.items()}
    gt_pi, patient_of = None, None
    if args.gt_pi:
        rows = _read_keyed_csv(args.gt_pi, ["image_id", "pi"])
        gt_pi = {k: float(r["pi"]) for k, r in rows.items()}
        patient_of = {k: r.get("patient_id") or k for k, r in rows.items()}
    out = prepare_out_dir(Path(args.out), args.force)
    report = evaluate(predictions, ground_truth, pi_ranges, gt_pi, patient_of, args.match_radius)
    report.to_json(out / "report.json")
    report.to_csv(out / "report.csv")
    write_plots(report, out / "plots")
    write_run_manifest(out, args, [a for a in (args.pred, args.gt, args.pi_ranges, args.gt_pi) if a])
    for key, value in sorted(report.aggregates.items()):
        print(f"{key}: {value}")
    if report.unmatched_ids:
        print(f"unmatched image ids: {', '.join(report.unmatched_ids)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ki67pi", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path)
        p.add_argument("--out", type=Path, required=True)
        p.add_argument("--seed", type=int)
        p.add_argument("--force", action="store_true", help="allow writing into a non-empty output directory")
        p.add_argument("--deterministic", action="store_true")

    p = sub.add_parser("synth", help="generate a synthetic annotated dataset")
    common(p)
    p.add_argument("--n", type=int, required=True, help="number of images")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train UV-Net on a dataset manifest")
    common(p)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="detect nuclei and compute the proliferation index")
    common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--tile-size", type=int, default=DEFAULT_TILE_SIZE)
    p.add_argument("--overlay", action="store_true", help="also write detection overlays")
    p.add_argument("images", nargs="+")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score detection CSVs against references")
    common(p)
    p.add_argument("--pred", type=Path, required=True, help="directory of detection CSVs")
    p.add_argument("--gt", type=Path, help="directory of ground-truth annotation CSVs")
    p.add_argument("--pi-ranges", type=Path, help="CSV image_id,lo,hi (percent)")
    p.add_argument("--gt-pi", type=Path, help="CSV image_id,pi[,patient_id]")
    p.add_argument("--match-radius", type=float, default=DEFAULT_MATCH_RADIUS)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"ki67pi {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - every runtime failure maps to exit 1
        log.debug("failure", exc_info=True)
        print(f"ki67pi {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
