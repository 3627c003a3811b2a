"""Segmentation metrics for the actor, action and joint actor-action settings.

Confusion counts are accumulated over the whole dataset first and the three
metrics are computed once per setting from the summed counts:

* global accuracy: trace / total
* mean class accuracy: mean over classes present in the GT of recall
* mean class IoU: mean over classes with a non-empty union of TP / (TP+FP+FN)

A metric with nothing to average over is ``None`` (undefined), never 0.

The joint setting scores valid actor-action pairs only. A predicted pair that
is not in the taxonomy lands in one extra "invalid" bucket: it counts as a
miss against the true class but the bucket is never averaged over itself.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from actseg.config import BOUNDARY_RADIUS
from actseg.constants import (
    METRIC_LABELS,
    METRICS,
    SETTING_LABELS,
    SETTINGS,
    VARIANT_ALL,
    VARIANT_NON_BOUNDARY,
)
from actseg.services.core import FramePrediction, LabelMap, ShapeError, Taxonomy
from actseg.utils import fmt_percent

log = logging.getLogger(__name__)


# ── Confusion counts ──────────────────────────────────────────────────


@dataclass(frozen=True)
class ConfusionCounts:
    counts: np.ndarray  # (K + extra, K + extra) int64, counts[gt, pred]
    num_classes: int  # rows/cols past this index are excluded buckets

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: ConfusionCounts) -> ConfusionCounts:
        if self.counts.shape != other.counts.shape or self.num_classes != other.num_classes:
            raise ShapeError("cannot merge confusion counts of different sizes")
        return ConfusionCounts(self.counts + other.counts, self.num_classes)

    @classmethod
    def zeros(cls, num_classes: int, extra: int = 0) -> ConfusionCounts:
        size = num_classes + extra
        return cls(np.zeros((size, size), dtype=np.int64), num_classes)


def confusion_counts(pred: LabelMap, gt: LabelMap, num_classes: int, extra: int = 0) -> ConfusionCounts:
    """Count (gt, pred) pairs over pixels that neither map ignores."""
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} and ground truth {gt.shape} differ in size")
    size = num_classes + extra
    keep = gt.evaluated() & pred.evaluated()
    g = gt.labels[keep].astype(np.int64)
    p = pred.labels[keep].astype(np.int64)
    if g.size and (g.max() >= size or p.max() >= size):
        raise ValueError(f"label out of range for {num_classes} classes")
    counts = np.bincount(g * size + p, minlength=size * size).reshape(size, size)
    return ConfusionCounts(counts.astype(np.int64), num_classes)


def global_accuracy(c: ConfusionCounts) -> float | None:
    total = c.total
    if total == 0:
        return None
    k = c.num_classes
    return int(np.trace(c.counts[:k, :k])) / total


def per_class_accuracy(c: ConfusionCounts) -> list[float | None]:
    """Recall of every class, None where the class has no GT pixels."""
    k = c.num_classes
    rows = c.counts[:k].sum(axis=1)
    return [int(c.counts[i, i]) / int(rows[i]) if rows[i] else None for i in range(k)]


def per_class_iou(c: ConfusionCounts) -> list[float | None]:
    k = c.num_classes
    rows = c.counts.sum(axis=1)
    cols = c.counts.sum(axis=0)
    out = []
    for i in range(k):
        tp = int(c.counts[i, i])
        union = int(rows[i]) + int(cols[i]) - tp
        out.append(tp / union if union else None)
    return out


def _mean_defined(values: list[float | None]) -> float | None:
    defined = [v for v in values if v is not None]
    if not defined:
        return None
    return sum(defined) / len(defined)


def mean_class_accuracy(c: ConfusionCounts) -> float | None:
    return _mean_defined(per_class_accuracy(c))


def mean_class_iou(c: ConfusionCounts) -> float | None:
    return _mean_defined(per_class_iou(c))


METRIC_FUNCTIONS = {
    "global_accuracy": global_accuracy,
    "mean_class_accuracy": mean_class_accuracy,
    "mean_class_iou": mean_class_iou,
}


# ── Boundary band ─────────────────────────────────────────────────────


def label_boundaries(labels: np.ndarray) -> np.ndarray:
    """Pixels with a 4-neighbour of a different label."""
    edge = np.zeros(labels.shape, dtype=bool)
    horiz = labels[:, 1:] != labels[:, :-1]
    vert = labels[1:, :] != labels[:-1, :]
    edge[:, 1:] |= horiz
    edge[:, :-1] |= horiz
    edge[1:, :] |= vert
    edge[:-1, :] |= vert
    return edge


def boundary_band(gt: LabelMap, radius: int = BOUNDARY_RADIUS) -> np.ndarray:
    """Pixels within Chebyshev distance ``radius`` of a GT label change."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    edge = label_boundaries(gt.labels)
    if radius == 0 or not edge.any():
        return edge
    square = np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)
    return ndimage.binary_dilation(edge, structure=square)


# ── Dataset evaluation ────────────────────────────────────────────────


@dataclass(frozen=True)
class MetricsReport:
    values: dict[tuple[str, str, str], float | None]  # (setting, metric, variant)
    per_category: dict[str, float | None]  # joint class name -> accuracy

    def value(self, setting: str, metric: str, variant: str = VARIANT_ALL) -> float | None:
        return self.values[(setting, metric, variant)]

    @property
    def variants(self) -> list[str]:
        seen = []
        for _, _, variant in self.values:
            if variant not in seen:
                seen.append(variant)
        return seen

    def rows(self) -> list[tuple[str, str, str, float | None]]:
        """(setting, metric, variant, value) in table order."""
        return [
            (s, m, v, self.values[(s, m, v)])
            for v in self.variants
            for s in SETTINGS
            for m in METRICS
            if (s, m, v) in self.values
        ]


def _setting_maps(
    pred: FramePrediction, gt_actor: LabelMap, gt_action: LabelMap, taxonomy: Taxonomy
) -> dict[str, tuple[LabelMap, LabelMap]]:
    """(prediction, ground truth) label maps for each setting."""
    if pred.joint is not None:
        joint_pred = pred.joint
    else:
        joint_pred = LabelMap(taxonomy.joint_labels(pred.actor.labels, pred.action.labels))
    both = gt_actor.evaluated() & gt_action.evaluated()
    # ignored pixels may hold any value; park them on background before the lookup
    actor = np.where(both, gt_actor.labels, taxonomy.background_actor_index)
    action = np.where(both, gt_action.labels, taxonomy.background_action_index)
    joint_gt = LabelMap(taxonomy.joint_labels(actor, action), ~both)
    return {
        "actor": (pred.actor, gt_actor),
        "action": (pred.action, gt_action),
        "actor_action": (joint_pred, joint_gt),
    }


def _class_layout(setting: str, taxonomy: Taxonomy) -> tuple[int, int]:
    if setting == "actor":
        return taxonomy.num_actors, 0
    if setting == "action":
        return taxonomy.num_actions, 0
    return taxonomy.num_pairs, 1


def frame_counts(
    pred: FramePrediction,
    gt: tuple[LabelMap, LabelMap],
    taxonomy: Taxonomy,
    non_boundary: bool = False,
    radius: int = BOUNDARY_RADIUS,
) -> dict[tuple[str, str], ConfusionCounts]:
    """Confusion counts of one frame per (setting, variant)."""
    gt_actor, gt_action = gt
    out = {}
    for setting, (p, g) in _setting_maps(pred, gt_actor, gt_action, taxonomy).items():
        k, extra = _class_layout(setting, taxonomy)
        out[(setting, VARIANT_ALL)] = confusion_counts(p, g, k, extra)
        if non_boundary:
            # band from this setting's own GT; ignored pixels still carry labels
            band = boundary_band(LabelMap(g.labels), radius)
            out[(setting, VARIANT_NON_BOUNDARY)] = confusion_counts(p, g.with_ignored(band), k, extra)
    return out


def accumulate_counts(
    predictions: Sequence[FramePrediction],
    ground_truths: Sequence[tuple[LabelMap, LabelMap]],
    taxonomy: Taxonomy,
    non_boundary: bool = False,
    radius: int = BOUNDARY_RADIUS,
    workers: int = 1,
) -> dict[tuple[str, str], ConfusionCounts]:
    if len(predictions) != len(ground_truths):
        raise ValueError(
            f"{len(predictions)} predictions for {len(ground_truths)} ground-truth frames"
        )
    variants = [VARIANT_ALL] + ([VARIANT_NON_BOUNDARY] if non_boundary else [])
    totals = {}
    for setting in SETTINGS:
        k, extra = _class_layout(setting, taxonomy)
        for variant in variants:
            totals[(setting, variant)] = ConfusionCounts.zeros(k, extra)

    def count(args):
        pred, gt = args
        return frame_counts(pred, gt, taxonomy, non_boundary, radius)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        for frame in pool.map(count, zip(predictions, ground_truths)):
            for key, counts in frame.items():
                totals[key] = totals[key] + counts
    return totals


def report_from_counts(
    totals: dict[tuple[str, str], ConfusionCounts], taxonomy: Taxonomy
) -> MetricsReport:
    values = {}
    for (setting, variant), counts in totals.items():
        for metric in METRICS:
            values[(setting, metric, variant)] = METRIC_FUNCTIONS[metric](counts)
    joint = totals[("actor_action", VARIANT_ALL)]
    per_category = dict(zip(taxonomy.category_names(), per_class_accuracy(joint)))
    return MetricsReport(values, per_category)


def evaluate_all(
    predictions: Sequence[FramePrediction],
    ground_truths: Sequence[tuple[LabelMap, LabelMap]],
    taxonomy: Taxonomy,
    non_boundary: bool = False,
    radius: int = BOUNDARY_RADIUS,
    workers: int = 1,
) -> MetricsReport:
    """All nine metrics (plus non-boundary variants) over a dataset."""
    if not predictions:
        log.warning("Evaluating an empty dataset; every metric is undefined")
    totals = accumulate_counts(predictions, ground_truths, taxonomy, non_boundary, radius, workers)
    return report_from_counts(totals, taxonomy)


# ── Text tables ───────────────────────────────────────────────────────


def render_table(report: MetricsReport, label: str = "model") -> str:
    """Metric grid: one row per variant, settings x metrics as columns."""
    head = ["", *(f"{SETTING_LABELS[s]} {METRIC_LABELS[m]}" for s in SETTINGS for m in METRICS)]
    rows = [head]
    for variant in report.variants:
        name = label if variant == VARIANT_ALL else f"{label} ({variant.replace('_', '-')})"
        rows.append([name, *(fmt_percent(report.value(s, m, variant)) for s in SETTINGS for m in METRICS)])
    return _align(rows)


def render_category_table(reports: dict[str, MetricsReport], taxonomy: Taxonomy) -> str:
    """Per-category accuracy, one block per actor, models as rows."""
    names = taxonomy.category_names()
    blocks: dict[str, list[int]] = {}
    for idx, pair in enumerate(taxonomy.pairs):
        key = "" if pair == taxonomy.background_pair else taxonomy.actor_names[pair[0]]
        blocks.setdefault(key, []).append(idx)

    out = []
    for actor, indices in blocks.items():
        header = ["", *(names[i].split("-", 1)[-1] for i in indices)]
        rows = [[actor] + [""] * len(indices), header]
        for label, report in reports.items():
            rows.append([label, *(fmt_percent(report.per_category[names[i]]) for i in indices)])
        out.append(_align(rows))
    means = [["", "mean"]] + [
        [label, fmt_percent(r.value("actor_action", "mean_class_accuracy"))] for label, r in reports.items()
    ]
    out.append(_align(means))
    return "\n\n".join(out)


def _align(rows: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = []
    for row in rows:
        cells = [cell.rjust(w) if i else cell.ljust(w) for i, (cell, w) in enumerate(zip(row, widths))]
        lines.append("  ".join(cells).rstrip())
    return "\n".join(lines)
