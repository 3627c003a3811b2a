"""Finite-difference verification of every differentiable operation.

Each check builds a small random instance, contracts the operation's output
with a fixed random upstream tensor so the objective is a scalar, and
compares the analytic backward against central differences. Instances are
resampled until no max, ReLU or pooling decision sits within a few eps of a
tie, so the numeric derivative is well defined.
"""

from __future__ import annotations

import logging
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from actseg.config import GRADCHECK_EPS, GRADCHECK_TOLERANCE
from actseg.services.core import LabelMap, RegionMask, RegionSet
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
    softmax_backward,
    softmax_pixelwise,
)
from actseg.services.regionhead import (
    HeadParams,
    head_backward,
    head_forward,
    init_head,
    roi_pool_backward,
    roi_pool_forward,
)
from actseg.services.training import actor_action_loss, finite_difference_check

log = logging.getLogger(__name__)

FAULT = 0.1
MAX_ATTEMPTS = 1000

OPERATIONS = (
    "two_stream_conv",
    "baseline_head",
    "roi_pool",
    "fc_head",
    "region_to_pixel",
    "softmax",
    "actor_action_loss",
)


@dataclass(frozen=True)
class GradcheckResult:
    operation: str
    max_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance


def _resample(rng: np.random.Generator, build: Callable, margin: float, what: str):
    """Call build(rng) -> (instance, gap) until gap exceeds margin."""
    for _ in range(MAX_ATTEMPTS):
        instance, gap = build(rng)
        if gap > margin:
            return instance
    raise RuntimeError(f"could not draw a tie-free {what} instance in {MAX_ATTEMPTS} attempts")


def _inject(analytic: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    out = {name: g.copy() for name, g in analytic.items()}
    first = next(iter(out))
    out[first].reshape(-1)[0] += FAULT
    return out


# ── Per-operation checks ──────────────────────────────────────────────


def _check_two_stream(rng: np.random.Generator, eps: float, fault: bool) -> float:
    def build(r):
        inputs = {
            "appearance": r.uniform(-1, 1, (4, 4, 2)),
            "motion": r.uniform(-1, 1, (4, 4, 2)),
        }
        for prefix in ("appearance", "motion"):
            p = init_stream(r, 2, 3)
            inputs[f"{prefix}.weight"] = p.weight
            inputs[f"{prefix}.bias"] = r.uniform(-0.2, 0.2, 3)
        _, cache = _forward(inputs)
        gap = min(
            np.abs(cache.appearance.pre_activation).min(),
            np.abs(cache.motion.pre_activation).min(),
        )
        return inputs, gap

    def _forward(t):
        return two_stream_forward(
            t["appearance"], t["motion"],
            StreamParams(t["appearance.weight"], t["appearance.bias"]),
            StreamParams(t["motion.weight"], t["motion.bias"]),
        )

    inputs = _resample(rng, build, 4 * eps, "two-stream")
    upstream = rng.normal(size=(4, 4, 6))
    _, cache = _forward(inputs)
    ga, gm, d_app, d_mot = two_stream_backward(
        cache,
        StreamParams(inputs["appearance.weight"], inputs["appearance.bias"]),
        StreamParams(inputs["motion.weight"], inputs["motion.bias"]),
        upstream,
    )
    analytic = {
        "appearance": d_app,
        "motion": d_mot,
        "appearance.weight": ga.weight,
        "appearance.bias": ga.bias,
        "motion.weight": gm.weight,
        "motion.bias": gm.bias,
    }
    if fault:
        analytic = _inject(analytic)
    return finite_difference_check(lambda t: float((_forward(t)[0] * upstream).sum()), inputs, analytic, eps)


def _check_baseline(rng: np.random.Generator, eps: float, fault: bool) -> float:
    p = init_baseline(rng, 4, 3, 4)
    inputs = {
        "fused": rng.uniform(0, 1, (3, 3, 4)),
        "actor.weight": p.actor_weight,
        "actor.bias": rng.normal(size=3),
        "action.weight": p.action_weight,
        "action.bias": rng.normal(size=4),
    }
    up_actor = rng.normal(size=(3, 3, 3))
    up_action = rng.normal(size=(3, 3, 4))

    def params(t):
        return BaselineParams(t["actor.weight"], t["actor.bias"], t["action.weight"], t["action.bias"])

    def objective(t):
        s_actor, s_action = baseline_forward(t["fused"], params(t))
        return float((s_actor * up_actor).sum() + (s_action * up_action).sum())

    grads, d_fused = baseline_backward(inputs["fused"], params(inputs), up_actor, up_action)
    analytic = {
        "fused": d_fused,
        "actor.weight": grads.actor_weight,
        "actor.bias": grads.actor_bias,
        "action.weight": grads.action_weight,
        "action.bias": grads.action_bias,
    }
    if fault:
        analytic = _inject(analytic)
    return finite_difference_check(objective, inputs, analytic, eps)


def _check_roi_pool(rng: np.random.Generator, eps: float, fault: bool) -> float:
    h, w, c = 6, 6, 2
    # distinct values spaced well beyond 2 * eps, so no cell has a tie
    values = rng.permutation(h * w * c) / (h * w * c) * 2.0 - 1.0
    inputs = {"features": values.reshape(h, w, c)}
    boxes = np.array([[0.5, 0.3, 5.2, 4.9], [1.0, 1.0, 6.0, 6.0], [2.2, 0.0, 4.0, 3.1]])
    grid = 2
    upstream = rng.normal(size=(len(boxes), grid, grid, c))
    _, witness = roi_pool_forward(inputs["features"], boxes, grid)
    analytic = {"features": roi_pool_backward(witness, upstream)}
    if fault:
        analytic = _inject(analytic)
    return finite_difference_check(
        lambda t: float((roi_pool_forward(t["features"], boxes, grid)[0] * upstream).sum()),
        inputs, analytic, eps,
    )


def _check_fc_head(rng: np.random.Generator, eps: float, fault: bool) -> float:
    grid = 2

    def build(r):
        head = init_head(r, 2, grid, 2, 6, 3, 4)
        inputs = {"pooled": r.uniform(-1, 1, (2, grid, grid, 2))}
        inputs |= {name: t.copy() for name, t in head.named()}
        for name in inputs:
            if name.endswith(".bias"):
                inputs[name] = r.uniform(-0.2, 0.2, inputs[name].shape)
        _, cache = head_forward(inputs["pooled"], HeadParams.from_named(inputs, grid))
        return inputs, min(np.abs(pre).min() for pre in cache.pre_activations)

    inputs = _resample(rng, build, 0.02, "FC head")
    up = RegionScores(rng.normal(size=(2, 3)), rng.normal(size=(2, 4)))

    def objective(t):
        scores, _ = head_forward(t["pooled"], HeadParams.from_named(t, grid))
        return float((scores.actor * up.actor).sum() + (scores.action * up.action).sum())

    params = HeadParams.from_named(inputs, grid)
    _, cache = head_forward(inputs["pooled"], params)
    grads, d_pooled = head_backward(cache, params, up)
    analytic = {"pooled": d_pooled} | dict(grads.named())
    if fault:
        analytic = _inject(analytic)
    return finite_difference_check(objective, inputs, analytic, eps)


def random_regions(rng: np.random.Generator, n: int, width: int, height: int) -> RegionSet:
    """Random boxes inside the frame with sparse masks in {0} U [0.2, 1]."""
    regions = []
    for _ in range(n):
        x0, y0 = rng.uniform(0, width - 1), rng.uniform(0, height - 1)
        x1, y1 = rng.uniform(x0 + 1, width), rng.uniform(y0 + 1, height)
        shape = tuple(rng.integers(1, 4, size=2))
        mask = rng.uniform(0.2, 1.0, shape) * (rng.random(shape) < 0.8)
        regions.append(RegionMask((x0, y0, x1, y1), mask))
    return RegionSet(tuple(regions), width, height)


def fusion_gap(regions: RegionSet, scores: np.ndarray, background: np.ndarray) -> float:
    """Smallest distance between the winning and runner-up candidate anywhere."""
    if not len(regions):
        return np.inf
    m = regions.coverage()
    cand = np.concatenate(
        [
            np.broadcast_to(background, (1, *m.shape[1:], len(background))),
            np.where(m[..., None] > 0, m[..., None] * scores[:, None, None, :], -np.inf),
        ]
    )
    top = np.sort(cand, axis=0)
    return float((top[-1] - top[-2]).min())


def _check_region_to_pixel(rng: np.random.Generator, eps: float, fault: bool) -> float:
    h = w = 5
    k = 3

    def build(r):
        regions = random_regions(r, 3, w, h)
        inputs = {"scores": r.normal(size=(3, k)), "background": r.normal(size=k)}
        return (regions, inputs), fusion_gap(regions, inputs["scores"], inputs["background"])

    regions, inputs = _resample(rng, build, 3 * eps, "region-to-pixel")
    coverage = regions.coverage()
    upstream = rng.normal(size=(h, w, k))

    def objective(t):
        fused, _ = region_to_pixel_forward(regions, t["scores"], t["background"], coverage)
        return float((fused * upstream).sum())

    _, witness = region_to_pixel_forward(regions, inputs["scores"], inputs["background"], coverage)
    g_scores, g_background = region_to_pixel_backward(witness, regions, upstream)
    analytic = {"scores": g_scores, "background": g_background}
    if fault:
        analytic = _inject(analytic)
    return finite_difference_check(objective, inputs, analytic, eps)


def _check_softmax(rng: np.random.Generator, eps: float, fault: bool) -> float:
    inputs = {"scores": rng.normal(scale=2.0, size=(3, 4, 5))}
    upstream = rng.normal(size=(3, 4, 5))
    probs = softmax_pixelwise(inputs["scores"])
    analytic = {"scores": softmax_backward(probs, upstream)}
    if fault:
        analytic = _inject(analytic)
    return finite_difference_check(
        lambda t: float((softmax_pixelwise(t["scores"]) * upstream).sum()), inputs, analytic, eps
    )


def _check_loss(rng: np.random.Generator, eps: float, fault: bool) -> float:
    shape = (3, 4)
    ignore = rng.random(shape) < 0.25
    ignore[0, 0] = False
    gt_actor = LabelMap(rng.integers(0, 3, shape).astype(np.uint16), ignore)
    gt_action = LabelMap(rng.integers(0, 4, shape).astype(np.uint16), ignore)
    inputs = {"actor": rng.normal(size=(*shape, 3)), "action": rng.normal(size=(*shape, 4))}

    def objective(t):
        loss, _, _ = actor_action_loss(
            softmax_pixelwise(t["actor"]), softmax_pixelwise(t["action"]), gt_actor, gt_action
        )
        return loss

    _, g_actor, g_action = actor_action_loss(
        softmax_pixelwise(inputs["actor"]), softmax_pixelwise(inputs["action"]), gt_actor, gt_action
    )
    analytic = {"actor": g_actor, "action": g_action}
    if fault:
        analytic = _inject(analytic)
    return finite_difference_check(objective, inputs, analytic, eps)


_CHECKS = {
    "two_stream_conv": _check_two_stream,
    "baseline_head": _check_baseline,
    "roi_pool": _check_roi_pool,
    "fc_head": _check_fc_head,
    "region_to_pixel": _check_region_to_pixel,
    "softmax": _check_softmax,
    "actor_action_loss": _check_loss,
}


def run_gradcheck(
    seed: int = 0,
    eps: float = GRADCHECK_EPS,
    tolerance: float = GRADCHECK_TOLERANCE,
    inject_fault: bool = False,
) -> list[GradcheckResult]:
    """One result per differentiable operation, in OPERATIONS order."""
    results = []
    for index, name in enumerate(OPERATIONS):
        rng = np.random.default_rng([seed, index])
        err = _CHECKS[name](rng, eps, inject_fault)
        result = GradcheckResult(name, err, tolerance)
        log.debug("gradcheck %s: %.3e", name, err)
        results.append(result)
    return results


def format_report(results: list[GradcheckResult]) -> str:
    width = max(len(r.operation) for r in results)
    lines = [f"{'operation'.ljust(width)}  max_rel_err  status"]
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        lines.append(f"{r.operation.ljust(width)}  {r.max_error:11.3e}  {status}")
    return "\n".join(lines)
