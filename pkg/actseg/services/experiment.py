"""Experiment wiring shared by the CLI commands and the end-to-end checks.

An :class:`ExperimentConfig` names everything a run depends on: the dataset,
training preset and overrides, model sizes, which streams feed the model,
which head predicts, and the mask quality used for training and testing.
"""

from __future__ import annotations

import json
import logging
import time
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from actseg.config import (
    BOUNDARY_RADIUS,
    FEATURE_WIDTH,
    HIDDEN_LAYERS,
    HIDDEN_WIDTH,
    OUTPUT_DIR,
    POOL_GRID,
)
from actseg.constants import (
    HEAD_BASELINE,
    HEAD_REGION,
    MASK_LEVELS,
    STREAMS_RGB_FLOW,
    STREAMS_RGB_ONLY,
)
from actseg.services.core import FramePrediction, FrameSample, LabelMap, RegionSet, Taxonomy
from actseg.services.fusion import argmax_labeling, joint_probability
from actseg.services.synthdata import corrupt_dataset_regions, corrupt_masks, mask_preset
from actseg.services.training import (
    LogRecord,
    ModelParams,
    ModelSpec,
    TrainConfig,
    predict_probabilities,
    train_two_stage,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str = ""
    out: str = OUTPUT_DIR
    preset: str = "toy"
    seed: int = 0
    overrides: dict = field(default_factory=dict)  # TrainConfig fields
    streams: str = STREAMS_RGB_FLOW
    head: str = HEAD_REGION
    feature_width: int = FEATURE_WIDTH
    pool_grid: int = POOL_GRID
    hidden_layers: int = HIDDEN_LAYERS
    hidden_width: int = HIDDEN_WIDTH
    train_masks: str = "gt"
    train_with_gt_masks: bool = False
    test_masks: str = "gt"
    mask_invalid: bool = False
    non_boundary: bool = False
    radius: int = BOUNDARY_RADIUS

    def __post_init__(self) -> None:
        if self.streams not in (STREAMS_RGB_FLOW, STREAMS_RGB_ONLY):
            raise ValueError(f"unknown streams {self.streams!r}")
        if self.head not in (HEAD_REGION, HEAD_BASELINE):
            raise ValueError(f"unknown head {self.head!r}")
        for name in ("train_masks", "test_masks"):
            if getattr(self, name) not in MASK_LEVELS:
                raise ValueError(f"{name} must be one of {MASK_LEVELS}")
        if self.radius < 0:
            raise ValueError("radius must be >= 0")
        tunable = {f.name for f in fields(TrainConfig)} - {"seed", "preset_name"}
        unknown = set(self.overrides) - tunable
        if unknown:
            raise ValueError(f"overrides name no tunable training field: {sorted(unknown)}")

    def train_config(self) -> TrainConfig:
        return TrainConfig.preset(self.preset, seed=self.seed, **self.overrides)

    def model_spec(self, sample: FrameSample, taxonomy: Taxonomy) -> ModelSpec:
        return ModelSpec(
            appearance_channels=sample.appearance.shape[-1],
            motion_channels=0 if self.streams == STREAMS_RGB_ONLY else sample.motion.shape[-1],
            num_actors=taxonomy.num_actors,
            num_actions=taxonomy.num_actions,
            feature_width=self.feature_width,
            pool_grid=self.pool_grid,
            hidden_layers=self.hidden_layers,
            hidden_width=self.hidden_width,
            background_actor_index=taxonomy.background_actor_index,
            background_action_index=taxonomy.background_action_index,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> ExperimentConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown experiment keys: {sorted(unknown)}")
        return cls(**data)


def read_experiment(path: str | Path | None) -> ExperimentConfig:
    """Config from a JSON file, or the defaults without one.

    Accepts a bare experiment dict or the config echo written by `train`.
    """
    if not path:
        return ExperimentConfig()
    data = json.loads(Path(path).read_text())
    if not isinstance(data, dict):
        raise ValueError(f"{path}: experiment config must be a JSON object")
    return ExperimentConfig.from_dict(data.get("experiment", data))


def train_model(
    samples: Sequence[FrameSample],
    taxonomy: Taxonomy,
    cfg: ExperimentConfig,
    stages: Sequence[int] = (1, 2),
    initial: ModelParams | None = None,
) -> tuple[ModelParams, list[LogRecord]]:
    """Two-stage training with the configured stage-2 mask quality."""
    if not samples:
        raise ValueError("training dataset is empty")
    stage2_regions = None
    if cfg.train_masks != "gt" or cfg.train_with_gt_masks:
        spec = mask_preset(cfg.train_masks, seed=cfg.seed)
        stage2_regions = corrupt_dataset_regions(samples, spec, include_gt=cfg.train_with_gt_masks)
    spec = initial.spec if initial is not None else cfg.model_spec(samples[0], taxonomy)
    return train_two_stage(
        samples, spec, cfg.train_config(), stages=stages, initial=initial, stage2_regions=stage2_regions
    )


def predict_frame(
    params: ModelParams,
    sample: FrameSample,
    taxonomy: Taxonomy,
    head: str = HEAD_REGION,
    regions: RegionSet | None = None,
    mask_invalid: bool = False,
) -> FramePrediction:
    """Actor, action and joint labels for every pixel of one frame."""
    p_actor, p_action = predict_probabilities(params, sample, head, regions)
    joint = joint_probability(p_actor, p_action, taxonomy, mask_invalid)
    flat = np.argmax(joint, axis=-1)
    actor_of, action_of = np.divmod(flat, taxonomy.num_actions)
    return FramePrediction(
        actor=argmax_labeling(p_actor),
        action=argmax_labeling(p_action),
        joint=LabelMap(taxonomy.joint_labels(actor_of, action_of).astype(np.uint16)),
    )


def predict_dataset(
    params: ModelParams,
    samples: Sequence[FrameSample],
    taxonomy: Taxonomy,
    head: str = HEAD_REGION,
    mask_level: str = "gt",
    mask_seed: int = 0,
    mask_invalid: bool = False,
    workers: int = 1,
) -> list[FramePrediction]:
    """Predictions in frame order; ``workers`` never changes the result."""
    spec = mask_preset(mask_level, seed=mask_seed)

    def run(item):
        index, sample = item
        started = time.perf_counter()
        regions = corrupt_masks(sample.regions, spec, stream=index) if head == HEAD_REGION else None
        pred = predict_frame(params, sample, taxonomy, head, regions, mask_invalid)
        log.debug("predicted %s in %.1f ms", sample.frame_id or index, 1e3 * (time.perf_counter() - started))
        return pred

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        return list(pool.map(run, enumerate(samples)))
