"""`actseg predict`: per-frame actor, action and joint label payloads."""

from __future__ import annotations

import argparse
import logging
from dataclasses import asdict
from pathlib import Path

from actseg.config import OUTPUT_DIR, THREADS
from actseg.constants import EXIT_OK, HEAD_BASELINE, HEAD_REGION, MASK_LEVELS
from actseg.services.experiment import predict_dataset, read_experiment
from actseg.store.datasets import read_dataset, write_predictions
from actseg.store.runs import read_params, write_config

log = logging.getLogger(__name__)


def run(args: argparse.Namespace) -> int:
    cfg = read_experiment(args.config)
    head = args.head or cfg.head
    test_masks = args.test_masks or cfg.test_masks
    mask_invalid = cfg.mask_invalid if args.mask_invalid is None else args.mask_invalid
    params = read_params(args.params)
    samples, taxonomy = read_dataset(args.dataset)
    if taxonomy.num_actors != params.spec.num_actors or taxonomy.num_actions != params.spec.num_actions:
        raise ValueError("model and dataset disagree on the number of classes")
    out = Path(args.out or Path(OUTPUT_DIR) / "predictions")

    predictions = predict_dataset(
        params,
        samples,
        taxonomy,
        head=head,
        mask_level=test_masks,
        mask_seed=args.mask_seed,
        mask_invalid=mask_invalid,
        workers=THREADS,
    )
    write_predictions(predictions, [s.frame_id for s in samples], out, taxonomy)
    write_config(
        out,
        {
            "params": str(args.params),
            "dataset": str(args.dataset),
            "head": head,
            "test_masks": test_masks,
            "mask_seed": args.mask_seed,
            "mask_invalid": mask_invalid,
            "model": asdict(params.spec),
        },
    )
    log.info("Predicted %d frames with the %s head", len(predictions), head)
    print(f"frames={len(predictions)} head={head} out={out}")
    return EXIT_OK


def setup(subparsers) -> None:
    p = subparsers.add_parser("predict", help="label every pixel of a dataset")
    p.add_argument("--config", help="experiment config JSON or a train config echo; flags override it")
    p.add_argument("--params", required=True, help="directory holding params.bin / params.json")
    p.add_argument("--dataset", required=True)
    p.add_argument("--head", choices=(HEAD_REGION, HEAD_BASELINE), help="default: region")
    p.add_argument("--test-masks", choices=MASK_LEVELS, help="region mask quality (default: gt)")
    p.add_argument("--mask-seed", type=int, default=0)
    p.add_argument("--mask-invalid", action=argparse.BooleanOptionalAction, help="zero invalid pairs in the joint product")
    p.add_argument("--out")
    p.set_defaults(handler=run)
