"""`actseg train`: two-stage training, writing params, log and config echo."""

from __future__ import annotations

import argparse
import json
import logging
from dataclasses import asdict
from pathlib import Path

from actseg.config import OUTPUT_DIR
from actseg.constants import EXIT_OK, MASK_LEVELS, STREAMS_RGB_FLOW, STREAMS_RGB_ONLY, TRAIN_PRESETS
from actseg.services.experiment import ExperimentConfig, train_model
from actseg.store.datasets import read_dataset
from actseg.store.runs import TRAIN_LOG, read_params, write_config, write_params, write_training_log
from actseg.utils import file_digest

log = logging.getLogger(__name__)

# flags that override TrainConfig fields of the same name
TRAIN_FLAGS = (
    "stage1_iters",
    "stage2_iters",
    "stage1_batch",
    "stage2_batch",
    "stage2_lr_background",
    "momentum",
    "weight_decay",
    "log_every",
)


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    data = {}
    if args.config:
        data = json.loads(Path(args.config).read_text())
    flags = {
        "dataset": args.dataset,
        "out": args.out,
        "preset": args.preset,
        "seed": args.seed,
        "streams": args.streams,
        "feature_width": args.feature_width,
        "pool_grid": args.pool_grid,
        "hidden_layers": args.hidden_layers,
        "hidden_width": args.hidden_width,
        "train_masks": args.train_masks,
        "train_with_gt_masks": args.train_with_gt_masks or None,
    }
    data |= {k: v for k, v in flags.items() if v is not None}
    overrides = dict(data.get("overrides", {}))
    overrides |= {name: getattr(args, name) for name in TRAIN_FLAGS if getattr(args, name) is not None}
    data["overrides"] = overrides
    if not data.get("dataset"):
        raise ValueError("no dataset given (--dataset or \"dataset\" in --config)")
    data.setdefault("out", str(Path(OUTPUT_DIR) / "model"))
    return ExperimentConfig.from_dict(data)


def run(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    stages = (1, 2) if args.stage is None else (args.stage,)
    if stages == (2,) and not args.resume:
        raise ValueError("--stage 2 needs --resume with stage-1 parameters")
    out = Path(cfg.out)
    echo = {"experiment": cfg.to_dict(), "train": asdict(cfg.train_config()), "stages": list(stages)}
    if args.dry_run:
        write_config(out, echo)
        print(f"config={out / 'config.json'}")
        return EXIT_OK

    samples, taxonomy = read_dataset(cfg.dataset)
    initial = read_params(args.resume) if args.resume else None
    log.info("Training on %d frames, stages %s, preset %s", len(samples), list(stages), cfg.preset)
    params, records = train_model(samples, taxonomy, cfg, stages, initial)

    echo["model"] = asdict(params.spec)
    write_config(out, echo)
    path = write_params(params, out)
    # stage 2 resumed in place extends the stage-1 log
    in_place = bool(args.resume) and Path(args.resume).resolve() == out.resolve()
    write_training_log(records, out / TRAIN_LOG, append=in_place)
    last = records[-1].loss if records else float("nan")
    print(f"params={path} sha256={file_digest(path)} iterations={len(records)} final_loss={last:.6f}")
    return EXIT_OK


def setup(subparsers) -> None:
    p = subparsers.add_parser("train", help="train the baseline (stage 1) and region head (stage 2)")
    p.add_argument("--config", help="experiment config JSON; flags override its keys")
    p.add_argument("--dataset", help="dataset directory")
    p.add_argument("--out", help="output directory for params, log and config echo")
    p.add_argument("--preset", choices=sorted(TRAIN_PRESETS))
    p.add_argument("--seed", type=int)
    p.add_argument("--stage", type=int, choices=(1, 2), help="run a single stage")
    p.add_argument("--resume", help="directory with params to start from")
    p.add_argument("--streams", choices=(STREAMS_RGB_FLOW, STREAMS_RGB_ONLY))
    p.add_argument("--feature-width", type=int)
    p.add_argument("--pool-grid", type=int)
    p.add_argument("--hidden-layers", type=int)
    p.add_argument("--hidden-width", type=int)
    p.add_argument("--train-masks", choices=MASK_LEVELS)
    p.add_argument("--train-with-gt-masks", action="store_true")
    p.add_argument("--stage1-iters", type=int)
    p.add_argument("--stage2-iters", type=int)
    p.add_argument("--stage1-batch", type=int)
    p.add_argument("--stage2-batch", type=int)
    p.add_argument("--stage2-lr-background", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--log-every", type=int)
    p.add_argument("--dry-run", action="store_true", help="resolve and echo the config, then stop")
    p.set_defaults(handler=run)
