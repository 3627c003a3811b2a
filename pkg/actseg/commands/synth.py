"""`actseg synth`: generate a synthetic dataset on disk."""

from __future__ import annotations

import argparse
import json
import logging
from pathlib import Path

from actseg.config import OUTPUT_DIR
from actseg.constants import EXIT_OK
from actseg.services.core import Taxonomy, validate_frame
from actseg.services.synthdata import SceneSpec, class_histogram, generate_dataset
from actseg.store.datasets import write_dataset

log = logging.getLogger(__name__)


def run(args: argparse.Namespace) -> int:
    spec = SceneSpec()
    if args.spec:
        spec = SceneSpec.from_dict(json.loads(Path(args.spec).read_text()))
    if args.part_fraction is not None:
        spec = SceneSpec.from_dict({**spec.to_dict(), "part_fraction": args.part_fraction})
    taxonomy = Taxonomy.default()
    samples = generate_dataset(spec, args.count, args.seed, taxonomy)
    for sample in samples:
        problems = validate_frame(sample, taxonomy)
        if problems:
            raise ValueError(f"generated frame {sample.frame_id} is invalid: {problems[0]}")
    out = Path(args.out or Path(OUTPUT_DIR) / "dataset")
    write_dataset(samples, out, taxonomy)
    log.info("Generated %d frames with seed %d", len(samples), args.seed)

    hist = class_histogram(samples, taxonomy)
    classes = ",".join(f"{name}:{n}" for name, n in sorted(hist.items())) or "-"
    print(f"frames={len(samples)} actors={sum(hist.values())} classes={classes}")
    return EXIT_OK


def setup(subparsers) -> None:
    p = subparsers.add_parser("synth", help="generate a synthetic part-motion dataset")
    p.add_argument("--spec", help="scene spec JSON (defaults to the built-in spec)")
    p.add_argument("--count", type=int, required=True, help="number of frames")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--part-fraction", type=float, help="override the moving-part fraction")
    p.add_argument("--out", help="output dataset directory")
    p.set_defaults(handler=run)
