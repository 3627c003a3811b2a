"""Region classification: box ROI max pooling and a small FC stack.

Boxes are clamped to the frame, quantised to whole pixels (floor for the
start, ceil for the end, at least one pixel), split into a G x G grid of
near-equal cells and max pooled per cell and channel. The pooled grid is
flattened and fed through L ReLU layers, then two linear heads give the
actor and action scores of every region.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from actseg.services.core import ShapeError, check_shape
from actseg.services.fusion import RegionScores
from actseg.utils import glorot_uniform


class DegenerateBoxError(ValueError):
    def __init__(self, index: int, box) -> None:
        super().__init__(f"box {index} {tuple(box)} is empty after clamping to the frame")
        self.index = index


# ── ROI pooling ───────────────────────────────────────────────────────


@dataclass(frozen=True)
class RoiWitness:
    argmax: np.ndarray  # (N, G, G, C) flat pixel index y * W + x
    feature_shape: tuple[int, int, int]


def quantize_box(box, index: int, width: int, height: int) -> tuple[int, int, int, int]:
    """Integer (x0, y0, x1, y1) of a box clamped to the frame."""
    x0, y0, x1, y1 = (min(max(float(v), 0.0), lim) for v, lim in zip(box, (width, height, width, height)))
    if not (x0 < x1 and y0 < y1):
        raise DegenerateBoxError(index, box)
    qx0, qy0 = min(math.floor(x0), width - 1), min(math.floor(y0), height - 1)
    qx1, qy1 = max(math.ceil(x1), qx0 + 1), max(math.ceil(y1), qy0 + 1)
    return qx0, qy0, qx1, qy1


def _grid_bounds(length: int, grid: int) -> list[tuple[int, int]]:
    return [((g * length) // grid, -((-(g + 1) * length) // grid)) for g in range(grid)]


def roi_pool_forward(
    features: np.ndarray, boxes: np.ndarray, grid: int
) -> tuple[np.ndarray, RoiWitness]:
    check_shape("features", features, (None, None, None))
    check_shape("boxes", boxes, (None, 4))
    h, w, c = features.shape
    n = boxes.shape[0]
    pooled = np.zeros((n, grid, grid, c), dtype=features.dtype)
    argmax = np.zeros((n, grid, grid, c), dtype=np.int64)
    channels = np.arange(c)
    for i in range(n):
        x0, y0, x1, y1 = quantize_box(boxes[i], i, w, h)
        rows = _grid_bounds(y1 - y0, grid)
        cols = _grid_bounds(x1 - x0, grid)
        for gy, (hs, he) in enumerate(rows):
            for gx, (ws, we) in enumerate(cols):
                block = features[y0 + hs:y0 + he, x0 + ws:x0 + we].reshape(-1, c)
                best = np.argmax(block, axis=0)
                pooled[i, gy, gx] = block[best, channels]
                bw = we - ws
                argmax[i, gy, gx] = (y0 + hs + best // bw) * w + (x0 + ws + best % bw)
    return pooled, RoiWitness(argmax=argmax, feature_shape=(h, w, c))


def roi_pool_backward(witness: RoiWitness, upstream: np.ndarray) -> np.ndarray:
    """Route each pooled gradient to the pixel that won its cell."""
    if upstream.shape != witness.argmax.shape:
        raise ShapeError(f"upstream {upstream.shape} does not match witness {witness.argmax.shape}")
    h, w, c = witness.feature_shape
    grad = np.zeros((h * w, c), dtype=np.float64)
    idx = witness.argmax.reshape(-1, c)
    np.add.at(grad, (idx, np.broadcast_to(np.arange(c), idx.shape)), upstream.reshape(-1, c))
    return grad.reshape(h, w, c)


# ── FC head ───────────────────────────────────────────────────────────


@dataclass(frozen=True)
class HeadParams:
    hidden_weights: tuple[np.ndarray, ...]  # (D_in, D_h), (D_h, D_h), ...
    hidden_biases: tuple[np.ndarray, ...]
    actor_weight: np.ndarray  # (D_last, K_actor)
    actor_bias: np.ndarray
    action_weight: np.ndarray  # (D_last, K_action)
    action_bias: np.ndarray
    grid: int

    def named(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for layer, (wt, b) in enumerate(zip(self.hidden_weights, self.hidden_biases)):
            out += [(f"hidden{layer}.weight", wt), (f"hidden{layer}.bias", b)]
        out += [
            ("actor.weight", self.actor_weight),
            ("actor.bias", self.actor_bias),
            ("action.weight", self.action_weight),
            ("action.bias", self.action_bias),
        ]
        return out

    @classmethod
    def from_named(cls, tensors: dict[str, np.ndarray], grid: int) -> HeadParams:
        layers = sum(1 for name in tensors if name.startswith("hidden") and name.endswith(".weight"))
        return cls(
            hidden_weights=tuple(tensors[f"hidden{i}.weight"] for i in range(layers)),
            hidden_biases=tuple(tensors[f"hidden{i}.bias"] for i in range(layers)),
            actor_weight=tensors["actor.weight"],
            actor_bias=tensors["actor.bias"],
            action_weight=tensors["action.weight"],
            action_bias=tensors["action.bias"],
            grid=grid,
        )


@dataclass(frozen=True)
class HeadCache:
    inputs: tuple[np.ndarray, ...]  # input to each hidden layer, then to the heads
    pre_activations: tuple[np.ndarray, ...]
    pooled_shape: tuple[int, ...]


def init_head(
    rng: np.random.Generator,
    in_channels: int,
    grid: int,
    hidden_layers: int,
    hidden_width: int,
    num_actors: int,
    num_actions: int,
) -> HeadParams:
    dims = [grid * grid * in_channels] + [hidden_width] * hidden_layers
    weights = tuple(glorot_uniform(rng, a, b) for a, b in zip(dims[:-1], dims[1:]))
    biases = tuple(np.zeros(b) for b in dims[1:])
    return HeadParams(
        hidden_weights=weights,
        hidden_biases=biases,
        actor_weight=glorot_uniform(rng, dims[-1], num_actors),
        actor_bias=np.zeros(num_actors),
        action_weight=glorot_uniform(rng, dims[-1], num_actions),
        action_bias=np.zeros(num_actions),
        grid=grid,
    )


def head_forward(pooled: np.ndarray, params: HeadParams) -> tuple[RegionScores, HeadCache]:
    check_shape("pooled", pooled, (None, params.grid, params.grid, None))
    x = pooled.reshape(pooled.shape[0], int(np.prod(pooled.shape[1:])))
    d_in = params.hidden_weights[0].shape[0] if params.hidden_weights else params.actor_weight.shape[0]
    if x.shape[1] != d_in:
        raise ShapeError(f"pooled features flatten to {x.shape[1]}, head expects {d_in}")
    inputs, pres = [], []
    for wt, b in zip(params.hidden_weights, params.hidden_biases):
        inputs.append(x)
        pre = x @ wt + b
        pres.append(pre)
        x = np.maximum(pre, 0.0)
    inputs.append(x)
    scores = RegionScores(
        actor=x @ params.actor_weight + params.actor_bias,
        action=x @ params.action_weight + params.action_bias,
    )
    return scores, HeadCache(tuple(inputs), tuple(pres), pooled.shape)


def head_backward(
    cache: HeadCache, params: HeadParams, upstream: RegionScores
) -> tuple[HeadParams, np.ndarray]:
    """Parameter gradients (as a HeadParams) and the gradient w.r.t. pooled input."""
    x = cache.inputs[-1]
    if upstream.actor.shape != (x.shape[0], params.actor_weight.shape[1]):
        raise ShapeError(f"actor upstream {upstream.actor.shape} does not match head output")
    if upstream.action.shape != (x.shape[0], params.action_weight.shape[1]):
        raise ShapeError(f"action upstream {upstream.action.shape} does not match head output")
    g_actor_w = x.T @ upstream.actor
    g_action_w = x.T @ upstream.action
    dx = upstream.actor @ params.actor_weight.T + upstream.action @ params.action_weight.T

    g_weights, g_biases = [], []
    for layer in reversed(range(len(params.hidden_weights))):
        dpre = dx * (cache.pre_activations[layer] > 0)
        g_weights.append(cache.inputs[layer].T @ dpre)
        g_biases.append(dpre.sum(axis=0))
        dx = dpre @ params.hidden_weights[layer].T

    grads = HeadParams(
        hidden_weights=tuple(reversed(g_weights)),
        hidden_biases=tuple(reversed(g_biases)),
        actor_weight=g_actor_w,
        actor_bias=upstream.actor.sum(axis=0),
        action_weight=g_action_w,
        action_bias=upstream.action.sum(axis=0),
        grid=params.grid,
    )
    return grads, dx.reshape(cache.pooled_shape)
