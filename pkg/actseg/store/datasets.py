"""Datasets and prediction sets on disk.

A dataset directory holds ``manifest.json`` and one raw payload per tensor:

    manifest.json
    00000_appearance.bin   float32 (H, W, C_a)
    00000_motion.bin       float32 (H, W, C_m)
    00000_gt_actor.bin     uint16  (H, W)
    00000_gt_action.bin    uint16  (H, W)
    00000_region0.bin      float32 (H_b, W_b)
    ...

Ignore masks, when present, are stored as uint16 0/1 payloads next to the
labels. Prediction directories follow the same convention with one label
payload per frame and task (actor, action, joint).
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from pathlib import Path

import numpy as np

from actseg.config import FORMAT_VERSION
from actseg.services.core import (
    FramePrediction,
    FrameSample,
    LabelMap,
    RegionMask,
    RegionSet,
    Taxonomy,
)
from actseg.store.payloads import (
    MANIFEST,
    ManifestError,
    check_version,
    read_json,
    read_payload,
    store_errors,
    write_json,
    write_payload,
)

log = logging.getLogger(__name__)

DATASET = "dataset"
PREDICTIONS = "predictions"


def _tensor_record(directory: Path, name: str, array: np.ndarray, dtype: str) -> dict:
    write_payload(directory / name, array, dtype)
    return {"file": name, "shape": list(array.shape)}


def _read_tensor(directory: Path, record: dict, dtype: str) -> np.ndarray:
    return read_payload(directory / record["file"], record["shape"], dtype)


def _label_record(directory: Path, stem: str, labels: LabelMap) -> dict:
    record = _tensor_record(directory, f"{stem}.bin", labels.labels, "uint16")
    if labels.ignore_mask is not None:
        record["ignore_file"] = f"{stem}_ignore.bin"
        write_payload(directory / record["ignore_file"], labels.ignore_mask.astype(np.uint16), "uint16")
    return record


def _read_labels(directory: Path, record: dict) -> LabelMap:
    labels = _read_tensor(directory, record, "uint16")
    ignore = None
    if "ignore_file" in record:
        ignore = read_payload(directory / record["ignore_file"], record["shape"], "uint16") != 0
    return LabelMap(labels, ignore)


# ── Datasets ──────────────────────────────────────────────────────────


@store_errors
def write_dataset(samples: Sequence[FrameSample], path: str | Path, taxonomy: Taxonomy) -> Path:
    directory = Path(path)
    directory.mkdir(parents=True, exist_ok=True)
    frames = []
    for i, sample in enumerate(samples):
        stem = f"{i:05d}"
        regions = []
        for r, region in enumerate(sample.regions):
            record = _tensor_record(directory, f"{stem}_region{r}.bin", region.mask, "float32")
            regions.append(
                {"bbox": list(region.bbox), "mask_file": record["file"], "mask_shape": record["shape"]}
            )
        frames.append(
            {
                "frame_id": sample.frame_id or stem,
                "appearance": _tensor_record(directory, f"{stem}_appearance.bin", sample.appearance, "float32"),
                "motion": _tensor_record(directory, f"{stem}_motion.bin", sample.motion, "float32"),
                "gt_actor": _label_record(directory, f"{stem}_gt_actor", sample.gt_actor),
                "gt_action": _label_record(directory, f"{stem}_gt_action", sample.gt_action),
                "frame_width": sample.regions.frame_width,
                "frame_height": sample.regions.frame_height,
                "regions": regions,
            }
        )
    write_json(
        directory / MANIFEST,
        {
            "format_version": FORMAT_VERSION,
            "kind": DATASET,
            "taxonomy": taxonomy.to_dict(),
            "frames": frames,
        },
    )
    log.info("Wrote %d frames to %s", len(frames), directory)
    return directory


@store_errors
def read_dataset(path: str | Path) -> tuple[list[FrameSample], Taxonomy]:
    directory = Path(path)
    manifest = read_json(directory / MANIFEST)
    check_version(manifest, FORMAT_VERSION, DATASET)
    try:
        taxonomy = Taxonomy.from_dict(manifest["taxonomy"])
    except ValueError as e:
        raise ManifestError(f"invalid taxonomy: {e}") from e
    if not isinstance(manifest["frames"], list):
        raise ManifestError("frames must be a list")

    samples = []
    for frame in manifest["frames"]:
        regions = []
        for record in frame["regions"]:
            if len(record["bbox"]) != 4:
                raise ManifestError(f"bbox needs 4 values, got {record['bbox']}")
            mask = read_payload(directory / record["mask_file"], record["mask_shape"], "float32")
            regions.append(RegionMask(tuple(record["bbox"]), mask))
        samples.append(
            FrameSample(
                appearance=_read_tensor(directory, frame["appearance"], "float32"),
                motion=_read_tensor(directory, frame["motion"], "float32"),
                gt_actor=_read_labels(directory, frame["gt_actor"]),
                gt_action=_read_labels(directory, frame["gt_action"]),
                regions=RegionSet(tuple(regions), int(frame["frame_width"]), int(frame["frame_height"])),
                frame_id=frame["frame_id"],
            )
        )
    log.debug("Read %d frames from %s", len(samples), directory)
    return samples, taxonomy


# ── Predictions ───────────────────────────────────────────────────────


@store_errors
def write_predictions(
    predictions: Sequence[FramePrediction],
    frame_ids: Sequence[str],
    path: str | Path,
    taxonomy: Taxonomy,
) -> Path:
    if len(predictions) != len(frame_ids):
        raise ValueError("one frame id per prediction")
    directory = Path(path)
    directory.mkdir(parents=True, exist_ok=True)
    frames = []
    for i, (pred, frame_id) in enumerate(zip(predictions, frame_ids)):
        stem = f"{i:05d}"
        joint = pred.joint or LabelMap(taxonomy.joint_labels(pred.actor.labels, pred.action.labels))
        frames.append(
            {
                "frame_id": frame_id,
                "actor": _label_record(directory, f"{stem}_actor", pred.actor),
                "action": _label_record(directory, f"{stem}_action", pred.action),
                "joint": _label_record(directory, f"{stem}_joint", joint),
            }
        )
    write_json(
        directory / MANIFEST,
        {
            "format_version": FORMAT_VERSION,
            "kind": PREDICTIONS,
            "taxonomy": taxonomy.to_dict(),
            "frames": frames,
        },
    )
    return directory


@store_errors
def read_predictions(path: str | Path) -> tuple[list[FramePrediction], list[str]]:
    directory = Path(path)
    manifest = read_json(directory / MANIFEST)
    check_version(manifest, FORMAT_VERSION, PREDICTIONS)
    predictions, frame_ids = [], []
    for frame in manifest["frames"]:
        predictions.append(
            FramePrediction(
                actor=_read_labels(directory, frame["actor"]),
                action=_read_labels(directory, frame["action"]),
                joint=_read_labels(directory, frame["joint"]),
            )
        )
        frame_ids.append(frame["frame_id"])
    return predictions, frame_ids
