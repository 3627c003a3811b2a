"""`actseg fuse`: region scores to a per-pixel score map, as a standalone tool.

Inputs are a regions JSON document::

    {"frame_width": W, "frame_height": H, "num_classes": K,
     "regions": [{"bbox": [x0, y0, x1, y1], "mask_file": "...", "mask_shape": [h, w]}]}

and a float32 scores payload of shape (N + 1, K): the background scores first,
then one row per region in list order. The output is ``fused.bin`` (float32,
(H, W, K)) described by ``fused.json``.
"""

from __future__ import annotations

import argparse
import logging
from pathlib import Path

from actseg.constants import EXIT_OK
from actseg.services.core import RegionMask, RegionSet
from actseg.services.fusion import region_to_pixel_forward
from actseg.store.payloads import ManifestError, read_json, read_payload, store_errors, write_json, write_payload

log = logging.getLogger(__name__)

FUSED_BIN = "fused.bin"
FUSED_JSON = "fused.json"


@store_errors
def read_regions(path: Path) -> tuple[RegionSet, int]:
    doc = read_json(path)
    regions = []
    for record in doc["regions"]:
        if len(record["bbox"]) != 4:
            raise ManifestError(f"bbox needs 4 values, got {record['bbox']}")
        mask = read_payload(path.parent / record["mask_file"], record["mask_shape"], "float32")
        regions.append(RegionMask(tuple(record["bbox"]), mask))
    return RegionSet(tuple(regions), int(doc["frame_width"]), int(doc["frame_height"])), int(doc["num_classes"])


def run(args: argparse.Namespace) -> int:
    regions, k = read_regions(Path(args.regions))
    scores = read_payload(Path(args.scores), (len(regions) + 1, k), "float32").astype("float64")
    fused, witness = region_to_pixel_forward(regions, scores[1:], scores[0])

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_payload(out / FUSED_BIN, fused, "float32")
    write_json(out / FUSED_JSON, {"file": FUSED_BIN, "shape": list(fused.shape), "dtype": "float32"})
    background = int((witness.winner < 0).sum())
    print(f"regions={len(regions)} classes={k} background_wins={background} out={out / FUSED_BIN}")
    return EXIT_OK


def setup(subparsers) -> None:
    p = subparsers.add_parser("fuse", help="fuse region scores into a pixel score map")
    p.add_argument("--regions", required=True, help="regions JSON")
    p.add_argument("--scores", required=True, help="float32 (N+1, K) payload, background row first")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=run)
