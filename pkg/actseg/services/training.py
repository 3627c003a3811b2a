"""Model parameters, the actor-action loss, SGD and the two-stage schedule.

Stage 1 trains the two-stream front-end together with the per-pixel baseline
head, with separate learning rates for the two groups. Stage 2 freezes both
and trains only the region head and the background score vectors through
ROI pooling, region-to-pixel fusion and the same loss.

All randomness comes from ``numpy.random.default_rng`` seeded with
``(seed, stage)``, so a stage-1 run followed by a resumed stage-2 run is
bit-identical to one two-stage run.
"""

from __future__ import annotations

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field, replace

import numpy as np

from actseg.config import (
    BACKGROUND_INIT,
    BACKGROUND_LR_SCALE,
    FEATURE_WIDTH,
    HIDDEN_LAYERS,
    HIDDEN_WIDTH,
    LOG_CLAMP,
    POOL_GRID,
)
from actseg.constants import HEAD_BASELINE, HEAD_REGION, TRAIN_PRESETS
from actseg.services.core import FrameSample, LabelMap, RegionSet, ShapeError
from actseg.services.frontend import (
    BaselineParams,
    StreamParams,
    baseline_backward,
    baseline_forward,
    init_baseline,
    init_stream,
    two_stream_backward,
    two_stream_forward,
)
from actseg.services.fusion import (
    RegionScores,
    region_to_pixel_backward,
    region_to_pixel_forward,
    softmax_pixelwise,
)
from actseg.services.regionhead import (
    HeadParams,
    head_backward,
    head_forward,
    init_head,
    roi_pool_forward,
)

log = logging.getLogger(__name__)

# Parameter groups, for learning rates and freezing
FRONTEND = "frontend"
BASELINE = "baseline"
HEAD = "head"
BACKGROUND = "background"

_GROUP_OF_PREFIX = {
    "appearance": FRONTEND,
    "motion": FRONTEND,
    "baseline": BASELINE,
    "head": HEAD,
    "background": BACKGROUND,
}


class NonFiniteGradientError(ValueError):
    def __init__(self, name: str) -> None:
        super().__init__(f"non-finite gradient for parameter {name}")
        self.name = name


class EmptySupervisionError(ValueError):
    """Every pixel of a frame is ignored."""


# ── Configuration ─────────────────────────────────────────────────────


@dataclass(frozen=True)
class TrainConfig:
    stage1_lr_frontend: float
    stage1_lr_backend: float
    stage1_batch: int
    stage1_iters: int
    stage2_lr: float
    stage2_batch: int
    stage2_iters: int
    stage2_lr_background: float | None = None
    seed: int = 0
    preset_name: str = "custom"
    momentum: float = 0.0
    weight_decay: float = 0.0
    log_every: int = 100

    def __post_init__(self) -> None:
        for name in ("stage1_lr_frontend", "stage1_lr_backend", "stage2_lr"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        for name in ("stage1_batch", "stage1_iters", "stage2_batch", "stage2_iters"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if not (0 <= self.seed < 2**64):
            raise ValueError("seed must be a non-negative 64-bit integer")
        if self.momentum < 0 or self.weight_decay < 0:
            raise ValueError("momentum and weight decay must be >= 0")
        if self.stage2_lr_background is not None and not self.stage2_lr_background > 0:
            raise ValueError("stage2_lr_background must be > 0")

    @property
    def background_lr(self) -> float:
        if self.stage2_lr_background is None:
            return self.stage2_lr * BACKGROUND_LR_SCALE
        return self.stage2_lr_background

    @classmethod
    def preset(cls, name: str, seed: int = 0, **overrides) -> TrainConfig:
        if name not in TRAIN_PRESETS:
            raise ValueError(f"unknown preset {name!r}; choose from {sorted(TRAIN_PRESETS)}")
        lr_f, lr_b, b1, it1, lr2, b2, it2, lr_bg = TRAIN_PRESETS[name]
        base = cls(lr_f, lr_b, b1, it1, lr2, b2, it2, lr_bg, seed=seed, preset_name=name)
        return replace(base, **overrides) if overrides else base


@dataclass(frozen=True)
class ModelSpec:
    appearance_channels: int
    motion_channels: int  # 0 for an RGB-only model
    num_actors: int
    num_actions: int
    feature_width: int = FEATURE_WIDTH
    pool_grid: int = POOL_GRID
    hidden_layers: int = HIDDEN_LAYERS
    hidden_width: int = HIDDEN_WIDTH
    background_actor_index: int = 0
    background_action_index: int = 0

    @property
    def rgb_only(self) -> bool:
        return self.motion_channels == 0

    @property
    def fused_width(self) -> int:
        return self.feature_width * (1 if self.rgb_only else 2)


# ── Parameters ────────────────────────────────────────────────────────


@dataclass(frozen=True)
class ModelParams:
    spec: ModelSpec
    tensors: dict[str, np.ndarray] = field(repr=False)

    def names(self) -> list[str]:
        return list(self.tensors)

    @staticmethod
    def group_of(name: str) -> str:
        return _GROUP_OF_PREFIX[name.split(".", 1)[0]]

    def flatten(self) -> np.ndarray:
        return np.concatenate([t.ravel() for t in self.tensors.values()]).astype(np.float64)

    def from_flat(self, flat: np.ndarray) -> ModelParams:
        """Same layout, values taken from a flat vector."""
        total = sum(t.size for t in self.tensors.values())
        if flat.shape != (total,):
            raise ShapeError(f"flat parameter vector has {flat.size} values, model needs {total}")
        out, pos = {}, 0
        for name, t in self.tensors.items():
            out[name] = flat[pos:pos + t.size].reshape(t.shape).copy()
            pos += t.size
        return ModelParams(self.spec, out)

    def updated(self, values: dict[str, np.ndarray]) -> ModelParams:
        return ModelParams(self.spec, {n: values.get(n, t) for n, t in self.tensors.items()})

    def _prefixed(self, prefix: str) -> dict[str, np.ndarray]:
        cut = len(prefix) + 1
        return {n[cut:]: t for n, t in self.tensors.items() if n.startswith(prefix + ".")}

    @property
    def appearance(self) -> StreamParams:
        return StreamParams(**self._prefixed("appearance"))

    @property
    def motion(self) -> StreamParams | None:
        if self.spec.rgb_only:
            return None
        return StreamParams(**self._prefixed("motion"))

    @property
    def baseline(self) -> BaselineParams:
        t = self._prefixed("baseline")
        return BaselineParams(t["actor.weight"], t["actor.bias"], t["action.weight"], t["action.bias"])

    @property
    def head(self) -> HeadParams:
        return HeadParams.from_named(self._prefixed("head"), self.spec.pool_grid)

    @property
    def background_actor(self) -> np.ndarray:
        return self.tensors["background.actor"]

    @property
    def background_action(self) -> np.ndarray:
        return self.tensors["background.action"]


def _stream_named(prefix: str, p: StreamParams) -> dict[str, np.ndarray]:
    return {f"{prefix}.weight": p.weight, f"{prefix}.bias": p.bias}


def _baseline_named(p: BaselineParams) -> dict[str, np.ndarray]:
    return {
        "baseline.actor.weight": p.actor_weight,
        "baseline.actor.bias": p.actor_bias,
        "baseline.action.weight": p.action_weight,
        "baseline.action.bias": p.action_bias,
    }


def _head_named(p: HeadParams) -> dict[str, np.ndarray]:
    return {f"head.{name}": t for name, t in p.named()}


def init_params(spec: ModelSpec, seed: int) -> ModelParams:
    """Glorot-uniform weights and zero biases.

    Background scores start at BACKGROUND_INIT for every class except the
    background class, which starts at 0.
    """
    rng = np.random.default_rng([seed, 0])
    tensors = _stream_named("appearance", init_stream(rng, spec.appearance_channels, spec.feature_width))
    if not spec.rgb_only:
        tensors |= _stream_named("motion", init_stream(rng, spec.motion_channels, spec.feature_width))
    tensors |= _baseline_named(init_baseline(rng, spec.fused_width, spec.num_actors, spec.num_actions))
    tensors |= _head_named(
        init_head(
            rng,
            spec.fused_width,
            spec.pool_grid,
            spec.hidden_layers,
            spec.hidden_width,
            spec.num_actors,
            spec.num_actions,
        )
    )
    tensors["background.actor"] = np.full(spec.num_actors, BACKGROUND_INIT)
    tensors["background.actor"][spec.background_actor_index] = 0.0
    tensors["background.action"] = np.full(spec.num_actions, BACKGROUND_INIT)
    tensors["background.action"][spec.background_action_index] = 0.0
    return ModelParams(spec, tensors)


# ── Loss ──────────────────────────────────────────────────────────────


def cross_entropy_term(probs: np.ndarray, gt: np.ndarray, evaluated: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean -log p[gt] over evaluated pixels, and its gradient w.r.t. pre-softmax scores."""
    n = int(np.count_nonzero(evaluated))
    k = probs.shape[-1]
    labels = np.where(evaluated, gt, 0).astype(np.int64)
    if labels.max(initial=0) >= k:
        raise ValueError(f"ground-truth label out of range for {k} classes")
    picked = np.take_along_axis(probs, labels[..., None], axis=-1)[..., 0]
    loss = float(-np.log(np.maximum(picked[evaluated], LOG_CLAMP)).sum() / n)
    onehot = np.zeros_like(probs)
    np.put_along_axis(onehot, labels[..., None], 1.0, axis=-1)
    grad = np.where(evaluated[..., None], (probs - onehot) / n, 0.0)
    return loss, grad


def actor_action_loss(
    p_actor: np.ndarray, p_action: np.ndarray, gt_actor: LabelMap, gt_action: LabelMap
) -> tuple[float, np.ndarray, np.ndarray]:
    """Cross-entropy summed over both tasks, averaged over pixels.

    Returns the loss and its gradients w.r.t. the actor and action score maps
    that produced the two softmax outputs.
    """
    if p_actor.shape[:2] != gt_actor.shape or p_action.shape[:2] != gt_action.shape:
        raise ShapeError("probability maps and ground truth differ in size")
    evaluated = gt_actor.evaluated() & gt_action.evaluated()
    if not evaluated.any():
        raise EmptySupervisionError("every pixel is ignored; nothing to supervise")
    loss_a, grad_a = cross_entropy_term(p_actor, gt_actor.labels, evaluated)
    loss_c, grad_c = cross_entropy_term(p_action, gt_action.labels, evaluated)
    return loss_a + loss_c, grad_a, grad_c


# ── Optimiser ─────────────────────────────────────────────────────────


def sgd_step(
    params: ModelParams,
    grads: dict[str, np.ndarray],
    lr_map: dict[str, float],
    momentum: float = 0.0,
    weight_decay: float = 0.0,
    velocity: dict[str, np.ndarray] | None = None,
) -> ModelParams:
    """p <- p - lr(group) * g. Groups missing from lr_map are left untouched.

    ``velocity`` carries momentum buffers between calls and is updated in place.
    """
    updated = {}
    for name, value in params.tensors.items():
        lr = lr_map.get(params.group_of(name))
        if lr is None or name not in grads:
            continue
        g = grads[name]
        if g.shape != value.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter is {value.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(name)
        if weight_decay:
            g = g + weight_decay * value
        if momentum:
            buf = velocity.get(name) if velocity is not None else None
            g = g if buf is None else momentum * buf + g
            if velocity is not None:
                velocity[name] = g
        updated[name] = value - lr * g
    return params.updated(updated)


# ── Forward / backward paths ──────────────────────────────────────────


def frame_features(params: ModelParams, sample: FrameSample) -> np.ndarray:
    motion = None if params.spec.rgb_only else sample.motion
    fused, _ = two_stream_forward(sample.appearance, motion, params.appearance, params.motion)
    return fused


def baseline_loss_and_grads(params: ModelParams, sample: FrameSample) -> tuple[float, dict[str, np.ndarray]]:
    """Stage-1 objective: front-end + per-pixel head."""
    motion = None if params.spec.rgb_only else sample.motion
    fused, cache = two_stream_forward(sample.appearance, motion, params.appearance, params.motion)
    s_actor, s_action = baseline_forward(fused, params.baseline)
    loss, g_actor, g_action = actor_action_loss(
        softmax_pixelwise(s_actor), softmax_pixelwise(s_action), sample.gt_actor, sample.gt_action
    )
    g_baseline, d_fused = baseline_backward(fused, params.baseline, g_actor, g_action)
    g_app, g_mot, _, _ = two_stream_backward(cache, params.appearance, params.motion, d_fused)
    grads = _stream_named("appearance", g_app) | _baseline_named(g_baseline)
    if g_mot is not None:
        grads |= _stream_named("motion", g_mot)
    return loss, grads


def region_score_maps(
    params: ModelParams, fused: np.ndarray, regions: RegionSet, coverage: np.ndarray | None = None
):
    """Region head forward: (actor map, action map, caches for backward)."""
    pooled, _ = roi_pool_forward(fused, regions.boxes(), params.spec.pool_grid)
    scores, head_cache = head_forward(pooled, params.head)
    if coverage is None:
        coverage = regions.coverage()
    y_actor, wit_actor = region_to_pixel_forward(regions, scores.actor, params.background_actor, coverage)
    y_action, wit_action = region_to_pixel_forward(regions, scores.action, params.background_action, coverage)
    return y_actor, y_action, (head_cache, wit_actor, wit_action)


def region_loss_and_grads(
    params: ModelParams,
    fused: np.ndarray,
    regions: RegionSet,
    gt_actor: LabelMap,
    gt_action: LabelMap,
    coverage: np.ndarray | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Stage-2 objective: region head + background scores on fixed features."""
    y_actor, y_action, (head_cache, wit_actor, wit_action) = region_score_maps(
        params, fused, regions, coverage
    )
    loss, g_actor, g_action = actor_action_loss(
        softmax_pixelwise(y_actor), softmax_pixelwise(y_action), gt_actor, gt_action
    )
    gs_actor, gb_actor = region_to_pixel_backward(wit_actor, regions, g_actor)
    gs_action, gb_action = region_to_pixel_backward(wit_action, regions, g_action)
    g_head, _ = head_backward(head_cache, params.head, RegionScores(gs_actor, gs_action))
    grads = _head_named(g_head)
    grads["background.actor"] = gb_actor
    grads["background.action"] = gb_action
    return loss, grads


def predict_probabilities(
    params: ModelParams,
    sample: FrameSample,
    head: str = HEAD_REGION,
    regions: RegionSet | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel actor and action probabilities from either head."""
    fused = frame_features(params, sample)
    if head == HEAD_BASELINE:
        s_actor, s_action = baseline_forward(fused, params.baseline)
    elif head == HEAD_REGION:
        s_actor, s_action, _ = region_score_maps(params, fused, sample.regions if regions is None else regions)
    else:
        raise ValueError(f"unknown head {head!r}")
    return softmax_pixelwise(s_actor), softmax_pixelwise(s_action)


# ── Two-stage schedule ────────────────────────────────────────────────


@dataclass(frozen=True)
class LogRecord:
    iteration: int
    stage: int
    loss: float


def _accumulate(total: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
    for name, g in grads.items():
        total[name] = total[name] + g if name in total else g.copy()


def _run_stage(
    stage: int,
    params: ModelParams,
    frames: int,
    batch: int,
    iters: int,
    lr_map: dict[str, float],
    step_fn: Callable[[ModelParams, int], tuple[float, dict[str, np.ndarray]]],
    config: TrainConfig,
) -> tuple[ModelParams, list[LogRecord]]:
    rng = np.random.default_rng([config.seed, stage])
    velocity: dict[str, np.ndarray] = {}
    records = []
    for it in range(1, iters + 1):
        picks = rng.integers(0, frames, size=batch)
        total_loss, total = 0.0, {}
        for idx in picks:
            loss, grads = step_fn(params, int(idx))
            total_loss += loss
            _accumulate(total, grads)
        mean_grads = {n: g / batch for n, g in total.items()}
        params = sgd_step(params, mean_grads, lr_map, config.momentum, config.weight_decay, velocity)
        records.append(LogRecord(it, stage, total_loss / batch))
        if config.log_every and it % config.log_every == 0:
            window = records[-config.log_every:]
            log.info(
                "stage %d iter %d/%d mean loss %.4f",
                stage, it, iters, sum(r.loss for r in window) / len(window),
            )
    return params, records


def train_two_stage(
    dataset: Sequence[FrameSample],
    spec: ModelSpec,
    config: TrainConfig,
    stages: Sequence[int] = (1, 2),
    initial: ModelParams | None = None,
    stage2_regions: Sequence[RegionSet] | None = None,
) -> tuple[ModelParams, list[LogRecord]]:
    """Train the baseline (stage 1) and/or the region head (stage 2).

    ``initial`` resumes from saved parameters; ``stage2_regions`` replaces each
    frame's region set during stage 2 (e.g. corrupted masks plus GT masks).
    """
    if not dataset:
        raise ValueError("training dataset is empty")
    if stage2_regions is not None and len(stage2_regions) != len(dataset):
        raise ValueError("stage2_regions must have one region set per frame")
    params = initial if initial is not None else init_params(spec, config.seed)
    records: list[LogRecord] = []

    if 1 in stages:
        log.info("Stage 1: front-end + baseline, %d iterations", config.stage1_iters)

        def step1(p: ModelParams, idx: int):
            return baseline_loss_and_grads(p, dataset[idx])

        params, recs = _run_stage(
            1, params, len(dataset), config.stage1_batch, config.stage1_iters,
            {FRONTEND: config.stage1_lr_frontend, BASELINE: config.stage1_lr_backend},
            step1, config,
        )
        records += recs

    if 2 in stages:
        log.info("Stage 2: region head, %d iterations (front-end frozen)", config.stage2_iters)
        fused_cache: dict[int, np.ndarray] = {}
        coverage_cache: dict[int, np.ndarray] = {}

        def step2(p: ModelParams, idx: int):
            sample = dataset[idx]
            regions = sample.regions if stage2_regions is None else stage2_regions[idx]
            if idx not in fused_cache:
                fused_cache[idx] = frame_features(p, sample)
                coverage_cache[idx] = regions.coverage()
            return region_loss_and_grads(
                p, fused_cache[idx], regions, sample.gt_actor, sample.gt_action, coverage_cache[idx]
            )

        params, recs = _run_stage(
            2, params, len(dataset), config.stage2_batch, config.stage2_iters,
            {HEAD: config.stage2_lr, BACKGROUND: config.background_lr},
            step2, config,
        )
        records += recs
    return params, records


# ── Finite differences ────────────────────────────────────────────────


def finite_difference_check(
    objective: Callable[[dict[str, np.ndarray]], float],
    inputs: dict[str, np.ndarray],
    analytic: dict[str, np.ndarray],
    eps: float,
) -> float:
    """Max over all entries of |analytic - numeric| / max(1, |numeric|).

    ``objective`` reads the arrays in ``inputs``, which are perturbed in place
    one entry at a time (central differences) and restored afterwards.
    """
    worst = 0.0
    for name, array in inputs.items():
        flat = array.reshape(-1)
        grad = analytic[name].reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + eps
            f_plus = objective(inputs)
            flat[i] = saved - eps
            f_minus = objective(inputs)
            flat[i] = saved
            numeric = (f_plus - f_minus) / (2 * eps)
            worst = max(worst, abs(grad[i] - numeric) / max(1.0, abs(numeric)))
    return worst
