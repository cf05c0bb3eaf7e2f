"""Dataset-level scoring: per-image records, aggregates, JSON/CSV output and plots."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .annotations import CentroidLabel, Klass
from .metrics import (
    DEFAULT_MATCH_RADIUS,
    PIRecord,
    f1_score,
    match_centroids,
    pi_difference_stats,
    pi_range_accuracy,
)
from .postprocess import DetectionSet


@dataclass
class ImageEval:
    image_id: str
    n_pred_pos: int
    n_pred_neg: int
    pi_pred: float | None
    n_gt_pos: int | None = None
    n_gt_neg: int | None = None
    pi_gt: float | None = None
    tp_pos: int | None = None
    fp_pos: int | None = None
    fn_pos: int | None = None
    tp_neg: int | None = None
    fp_neg: int | None = None
    fn_neg: int | None = None
    f1_pos: float | None = None
    f1_neg: float | None = None
    pi_abs_diff: float | None = None  # percentage points
    pi_range: tuple[float, float] | None = None
    pi_in_range: bool | None = None


@dataclass
class EvalReport:
    images: list[ImageEval] = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)
    unmatched_ids: list[str] = field(default_factory=list)
    match_radius: float = DEFAULT_MATCH_RADIUS

    def to_dict(self) -> dict:
        return {
            "match_radius": self.match_radius,
            "aggregates": self.aggregates,
            "unmatched_ids": self.unmatched_ids,
            "images": [asdict(r) for r in self.images],
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    def to_csv(self, path) -> None:
        cols = list(ImageEval.__dataclass_fields__)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(cols)
            for rec in self.images:
                writer.writerow(["" if getattr(rec, c) is None else getattr(rec, c) for c in cols])


def _pi(n_pos, n_neg):
    return None if n_pos + n_neg == 0 else n_pos / (n_pos + n_neg)


def _counts(labels):
    n_pos = sum(1 for lbl in labels if _klass(lbl) is Klass.KI67_POS)
    return n_pos, len(labels) - n_pos


def _klass(item):
    return item.klass if isinstance(item, CentroidLabel) else Klass(item[2])


def _xy(items, klass):
    out = []
    for item in items:
        if _klass(item) is klass:
            out.append((item.x, item.y) if isinstance(item, CentroidLabel) else (item[0], item[1]))
    return out


def evaluate(predictions: dict[str, DetectionSet], ground_truth: dict | None = None,
             pi_ranges: dict | None = None, gt_pi: dict | None = None,
             patient_of: dict | None = None, match_radius: float = DEFAULT_MATCH_RADIUS) -> EvalReport:
    """Score predictions keyed by image id.

    ``ground_truth`` maps ids to centroid labels (cell-level mode),
    ``pi_ranges`` to closed percentage ranges (range mode) and ``gt_pi`` to a
    reference index in [0, 1] (index mode, averaged per patient through
    ``patient_of`` when given). Any combination may be supplied. Ids present
    on only one side are listed in ``unmatched_ids`` and left out.
    """
    references = [d for d in (ground_truth, pi_ranges, gt_pi) if d is not None]
    if not references:
        raise ValueError("evaluate needs ground_truth, pi_ranges or gt_pi")
    ref_ids = set().union(*references)
    ids = sorted(set(predictions) & ref_ids)
    unmatched = sorted(set(predictions) ^ ref_ids)
    report = EvalReport(unmatched_ids=unmatched, match_radius=match_radius)
    totals = {k: [0, 0, 0] for k in Klass}

    for image_id in ids:
        dets = predictions[image_id]
        n_pos, n_neg = dets.counts()
        rec = ImageEval(image_id, n_pos, n_neg, _pi(n_pos, n_neg))
        if ground_truth is not None and image_id in ground_truth:
            labels = ground_truth[image_id]
            rec.n_gt_pos, rec.n_gt_neg = _counts(labels)
            rec.pi_gt = _pi(rec.n_gt_pos, rec.n_gt_neg)
            for klass, tag in ((Klass.KI67_POS, "pos"), (Klass.KI67_NEG, "neg")):
                m = match_centroids(dets.of_class(klass), _xy(labels, klass), match_radius)
                setattr(rec, f"tp_{tag}", m.tp)
                setattr(rec, f"fp_{tag}", m.fp)
                setattr(rec, f"fn_{tag}", m.fn)
                setattr(rec, f"f1_{tag}", f1_score(m))
                totals[klass][0] += m.tp
                totals[klass][1] += m.fp
                totals[klass][2] += m.fn
        if gt_pi is not None and image_id in gt_pi:
            rec.pi_gt = float(gt_pi[image_id])
        if rec.pi_gt is not None and rec.pi_pred is not None:
            rec.pi_abs_diff = abs(rec.pi_pred - rec.pi_gt) * 100.0
        if pi_ranges is not None and image_id in pi_ranges:
            rec.pi_range = tuple(float(v) for v in pi_ranges[image_id])
            rec.pi_in_range = rec.pi_pred is not None and pi_range_accuracy([rec.pi_pred], [rec.pi_range]) == 1.0
        report.images.append(rec)

    agg = report.aggregates
    agg["n_images"] = len(ids)
    if ground_truth is not None:
        scored = [r for r in report.images if r.f1_pos is not None]
        for klass, tag in ((Klass.KI67_POS, "pos"), (Klass.KI67_NEG, "neg")):
            tp, fp, fn = totals[klass]
            agg[f"f1_{tag}_pooled"] = f1_score(tp=tp, fp=fp, fn=fn)
            agg[f"f1_{tag}_mean"] = float(np.mean([getattr(r, f"f1_{tag}") for r in scored])) if scored else None
    diffs = [r.pi_abs_diff for r in report.images if r.pi_abs_diff is not None]
    agg["n_pi_undefined"] = sum(1 for r in report.images if r.pi_pred is None)
    agg["mean_abs_pi_diff"] = float(np.mean(diffs)) if diffs else None
    if pi_ranges is not None:
        ranged = [r for r in report.images if r.pi_range is not None]
        agg["pi_range_accuracy"] = (
            pi_range_accuracy([r.pi_pred for r in ranged], [r.pi_range for r in ranged]) if ranged else None
        )
    paired = [r for r in report.images if r.pi_pred is not None and r.pi_gt is not None]
    if paired:
        groups: dict[str, list[ImageEval]] = {}
        for r in paired:
            key = patient_of.get(r.image_id, r.image_id) if patient_of else r.image_id
            groups.setdefault(key, []).append(r)
        keys = sorted(groups)
        pred = [float(np.mean([r.pi_pred for r in groups[k]])) for k in keys]
        gt = [float(np.mean([r.pi_gt for r in groups[k]])) for k in keys]
        stats = pi_difference_stats(pred, gt)
        agg["pi_difference"] = {
            "n_groups": len(keys),
            "mean_abs_diff": stats.mean_abs_diff,
            "std_abs_diff": stats.std_abs_diff,
            "cov": stats.cov,
            "perfect_agreement": stats.perfect_agreement,
        }
    return report


def pi_records(report: EvalReport) -> list[PIRecord]:
    return [PIRecord(r.image_id, r.n_pred_pos, r.n_pred_neg, r.pi_pred) for r in report.images]


def write_plots(report: EvalReport, out_dir) -> list[Path]:
    """F1 box plots, F1 against cell count, and PI-difference plots as PNG files."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    scored = [r for r in report.images if r.f1_pos is not None]
    if scored:
        fig, ax = plt.subplots(figsize=(4, 4))
        ax.boxplot([[r.f1_neg for r in scored], [r.f1_pos for r in scored]])
        ax.set_xticks([1, 2], ["Ki67-", "Ki67+"])
        ax.set_ylabel("F1")
        ax.set_ylim(0, 1.05)
        written.append(_save(fig, out_dir / "f1_boxplot.png"))

        fig, axes = plt.subplots(1, 2, figsize=(8, 4))
        for ax, tag, label in ((axes[0], "neg", "Ki67-"), (axes[1], "pos", "Ki67+")):
            ax.scatter([getattr(r, f"n_gt_{tag}") for r in scored], [getattr(r, f"f1_{tag}") for r in scored], s=12)
            ax.set_xlabel(f"# {label} cells")
            ax.set_ylabel("F1")
            ax.set_ylim(0, 1.05)
        written.append(_save(fig, out_dir / "f1_vs_cell_count.png"))

    diffs = [r.pi_abs_diff for r in report.images if r.pi_abs_diff is not None]
    if diffs:
        fig, axes = plt.subplots(1, 2, figsize=(8, 4))
        axes[0].boxplot([diffs])
        axes[0].set_ylabel("|PI difference| (%)")
        axes[1].bar([0], [np.mean(diffs)], yerr=[np.std(diffs)])
        axes[1].set_xticks([0], ["mean"])
        axes[1].set_ylabel("mean |PI difference| (%)")
        written.append(_save(fig, out_dir / "pi_difference.png"))
    return written


def _save(fig, path):
    import matplotlib.pyplot as plt

    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path
