"""Run artefacts: parameter files, training logs, metric tables, config echo."""

from __future__ import annotations

import csv
import logging
from collections.abc import Sequence
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from actseg.config import FORMAT_VERSION
from actseg.constants import METRICS, SETTINGS
from actseg.services.core import Taxonomy
from actseg.services.metrics import MetricsReport
from actseg.services.training import LogRecord, ModelParams, ModelSpec
from actseg.store.payloads import (
    ManifestError,
    PayloadShapeError,
    check_version,
    read_json,
    read_payload,
    store_errors,
    write_json,
    write_payload,
)
from actseg.utils import fmt_loss, fmt_metric, parse_metric

log = logging.getLogger(__name__)

PARAMS_BIN = "params.bin"
PARAMS_JSON = "params.json"
TRAIN_LOG = "train_log.csv"
CONFIG_ECHO = "config.json"
METRICS_CSV = "metrics.csv"
PER_CATEGORY_CSV = "per_category.csv"


# ── Parameters ────────────────────────────────────────────────────────


@store_errors
def write_params(params: ModelParams, directory: str | Path) -> Path:
    """Flat little-endian float64 values plus a JSON index of names and shapes."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_payload(directory / PARAMS_BIN, params.flatten(), "float64")
    write_json(
        directory / PARAMS_JSON,
        {
            "format_version": FORMAT_VERSION,
            "kind": "params",
            "model": asdict(params.spec),
            "tensors": [{"name": n, "shape": list(t.shape)} for n, t in params.tensors.items()],
        },
    )
    return directory / PARAMS_BIN


@store_errors
def read_params(directory: str | Path) -> ModelParams:
    directory = Path(directory)
    index = read_json(directory / PARAMS_JSON)
    check_version(index, FORMAT_VERSION, "params")
    known = {f.name for f in fields(ModelSpec)}
    spec = ModelSpec(**{k: v for k, v in index["model"].items() if k in known})
    shapes = [(t["name"], tuple(t["shape"])) for t in index["tensors"]]
    total = sum(int(np.prod(s, dtype=np.int64)) for _, s in shapes)
    flat = read_payload(directory / PARAMS_BIN, (total,), "float64")
    tensors, pos = {}, 0
    for name, shape in shapes:
        size = int(np.prod(shape, dtype=np.int64))
        tensors[name] = flat[pos:pos + size].reshape(shape).copy()
        pos += size
    if "background.actor" not in tensors or tensors["background.actor"].shape != (spec.num_actors,):
        raise PayloadShapeError("shape mismatch: parameter index does not match the model")
    return ModelParams(spec, tensors)


# ── Training log ──────────────────────────────────────────────────────


def write_training_log(records: Sequence[LogRecord], path: str | Path, append: bool = False) -> None:
    path = Path(path)
    fresh = not append or not path.exists()
    with path.open("w" if fresh else "a", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        if fresh:
            writer.writerow(["iteration", "stage", "loss"])
        for r in records:
            writer.writerow([r.iteration, r.stage, fmt_loss(r.loss)])


def read_training_log(path: str | Path) -> list[LogRecord]:
    with Path(path).open(newline="") as f:
        return [
            LogRecord(int(row["iteration"]), int(row["stage"]), float(row["loss"]))
            for row in csv.DictReader(f)
        ]


# ── Config echo ───────────────────────────────────────────────────────


def write_config(directory: str | Path, config: dict) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_json(directory / CONFIG_ECHO, config)
    return directory / CONFIG_ECHO


def read_config(directory: str | Path) -> dict:
    return read_json(Path(directory) / CONFIG_ECHO)


# ── Metric tables ─────────────────────────────────────────────────────


def write_metrics_csv(report: MetricsReport, path: str | Path) -> None:
    with Path(path).open("w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["setting", "metric", "variant", "value"])
        for setting, metric, variant, value in report.rows():
            writer.writerow([setting, metric, variant, fmt_metric(value)])


def write_per_category_csv(reports: dict[str, MetricsReport], taxonomy: Taxonomy, path: str | Path) -> None:
    """One row per model: joint classes as columns, then the class mean."""
    names = taxonomy.category_names()
    with Path(path).open("w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["method", *names, "mean"])
        for label, report in reports.items():
            mean = report.value("actor_action", "mean_class_accuracy")
            writer.writerow([label, *(fmt_metric(report.per_category[n]) for n in names), fmt_metric(mean)])


def read_metrics_csv(path: str | Path, per_category_path: str | Path | None = None) -> MetricsReport:
    values = {}
    with Path(path).open(newline="") as f:
        for row in csv.DictReader(f):
            if row["setting"] not in SETTINGS or row["metric"] not in METRICS:
                raise ManifestError(f"unknown metric row {row['setting']}/{row['metric']}")
            values[(row["setting"], row["metric"], row["variant"])] = parse_metric(row["value"])
    per_category = {}
    if per_category_path is not None:
        with Path(per_category_path).open(newline="") as f:
            reader = csv.reader(f)
            header = next(reader)
            first = next(reader, None)
            if first is not None:
                per_category = {n: parse_metric(v) for n, v in zip(header[1:-1], first[1:-1])}
    return MetricsReport(values, per_category)
