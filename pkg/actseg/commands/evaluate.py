"""`actseg evaluate`: metric CSVs for a prediction directory."""

from __future__ import annotations

import argparse
import logging
from pathlib import Path

from actseg.config import BOUNDARY_RADIUS, THREADS
from actseg.constants import EXIT_OK, SETTINGS
from actseg.services.experiment import read_experiment
from actseg.services.metrics import evaluate_all, render_category_table, render_table
from actseg.store.datasets import read_dataset, read_predictions
from actseg.store.payloads import ManifestError
from actseg.store.runs import (
    METRICS_CSV,
    PER_CATEGORY_CSV,
    read_config,
    write_config,
    write_metrics_csv,
    write_per_category_csv,
)
from actseg.utils import fmt_percent

log = logging.getLogger(__name__)


def _model_label(pred_dir: Path) -> str:
    try:
        return read_config(pred_dir).get("head", "model")
    except ManifestError:
        return "model"


def run(args: argparse.Namespace) -> int:
    cfg = read_experiment(args.config)
    non_boundary = cfg.non_boundary if args.non_boundary is None else args.non_boundary
    radius = cfg.radius if args.radius is None else args.radius
    if radius < 0:
        raise ValueError("--radius must be >= 0")
    pred_dir = Path(args.pred)
    predictions, frame_ids = read_predictions(pred_dir)
    samples, taxonomy = read_dataset(args.dataset)
    if len(predictions) != len(samples):
        raise ValueError(f"{len(predictions)} predicted frames for a {len(samples)}-frame dataset")
    for fid, sample in zip(frame_ids, samples):
        if fid != sample.frame_id:
            log.warning("Prediction %s is matched with dataset frame %s", fid, sample.frame_id)

    report = evaluate_all(
        predictions,
        [(s.gt_actor, s.gt_action) for s in samples],
        taxonomy,
        non_boundary=non_boundary,
        radius=radius,
        workers=THREADS,
    )
    label = args.label or _model_label(pred_dir)
    out = Path(args.out) if args.out else pred_dir / "metrics"
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(report, out / METRICS_CSV)
    write_per_category_csv({label: report}, taxonomy, out / PER_CATEGORY_CSV)
    write_config(
        out,
        {
            "pred": str(pred_dir),
            "dataset": str(args.dataset),
            "non_boundary": non_boundary,
            "radius": radius,
            "label": label,
        },
    )

    if args.table:
        print(render_table(report, label))
        print()
        print(render_category_table({label: report}, taxonomy))
    else:
        cells = " ".join(
            f"{s}={fmt_percent(report.value(s, 'mean_class_accuracy'))}"
            for s in SETTINGS
        )
        print(f"frames={len(samples)} class_ave {cells} out={out}")
    return EXIT_OK


def setup(subparsers) -> None:
    p = subparsers.add_parser("evaluate", help="compute the metric tables")
    p.add_argument("--config", help="experiment config JSON or a train config echo; flags override it")
    p.add_argument("--pred", required=True, help="prediction directory")
    p.add_argument("--dataset", required=True)
    p.add_argument("--non-boundary", action=argparse.BooleanOptionalAction, help="add rows ignoring the boundary band")
    p.add_argument("--radius", type=int, help=f"boundary band radius in pixels (default: {BOUNDARY_RADIUS})")
    p.add_argument("--table", action="store_true", help="print aligned tables")
    p.add_argument("--label", help="model name in the per-category table")
    p.add_argument("--out", help="output directory (default: <pred>/metrics)")
    p.set_defaults(handler=run)
