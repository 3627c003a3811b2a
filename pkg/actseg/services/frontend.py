"""Two-stream front-end and the per-pixel baseline head.

Each stream is one 3x3 convolution (stride 1, zero padding) with ReLU. The
appearance and motion streams run independently and their outputs are
concatenated along channels (early fusion). RGB-only models have no motion
stream at all, so fused features are C wide instead of 2C.

The baseline head is a per-pixel linear map from fused features to actor and
action scores. It never mixes pixels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from actseg.services.core import ShapeError, check_shape
from actseg.utils import glorot_uniform


@dataclass(frozen=True)
class StreamParams:
    weight: np.ndarray  # (3, 3, C_in, C)
    bias: np.ndarray  # (C,)


@dataclass(frozen=True)
class BaselineParams:
    actor_weight: np.ndarray  # (C_fused, K_actor)
    actor_bias: np.ndarray
    action_weight: np.ndarray  # (C_fused, K_action)
    action_bias: np.ndarray


@dataclass(frozen=True)
class ConvCache:
    columns: np.ndarray  # (H*W, 9*C_in)
    pre_activation: np.ndarray  # (H*W, C)
    input_shape: tuple[int, int, int]


@dataclass(frozen=True)
class FrontendCache:
    appearance: ConvCache
    motion: ConvCache | None


def init_stream(rng: np.random.Generator, in_channels: int, width: int) -> StreamParams:
    fan_in = 9 * in_channels
    return StreamParams(
        weight=glorot_uniform(rng, fan_in, width, (3, 3, in_channels, width)),
        bias=np.zeros(width),
    )


def init_baseline(rng: np.random.Generator, fused: int, num_actors: int, num_actions: int) -> BaselineParams:
    return BaselineParams(
        actor_weight=glorot_uniform(rng, fused, num_actors),
        actor_bias=np.zeros(num_actors),
        action_weight=glorot_uniform(rng, fused, num_actions),
        action_bias=np.zeros(num_actions),
    )


# ── Convolution ───────────────────────────────────────────────────────


def _im2col(x: np.ndarray) -> np.ndarray:
    h, w, c = x.shape
    padded = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    windows = sliding_window_view(padded, (3, 3), axis=(0, 1))  # (H, W, C, 3, 3)
    return windows.transpose(0, 1, 3, 4, 2).reshape(h * w, 9 * c)


def conv3x3_forward(x: np.ndarray, params: StreamParams) -> tuple[np.ndarray, ConvCache]:
    check_shape("stream input", x, (None, None, None))
    h, w, c_in = x.shape
    if params.weight.shape[:3] != (3, 3, c_in):
        raise ShapeError(f"stream expects {params.weight.shape[2]} input channels, got {c_in}")
    cols = _im2col(x.astype(np.float64, copy=False))
    pre = cols @ params.weight.reshape(9 * c_in, -1) + params.bias
    out = np.maximum(pre, 0.0).reshape(h, w, -1)
    return out, ConvCache(cols, pre, (h, w, c_in))


def conv3x3_backward(
    cache: ConvCache, params: StreamParams, upstream: np.ndarray
) -> tuple[StreamParams, np.ndarray]:
    h, w, c_in = cache.input_shape
    c = params.bias.shape[0]
    check_shape("stream upstream", upstream, (h, w, c))
    dpre = upstream.reshape(h * w, c) * (cache.pre_activation > 0)
    grads = StreamParams(
        weight=(cache.columns.T @ dpre).reshape(3, 3, c_in, c),
        bias=dpre.sum(axis=0),
    )
    dcols = (dpre @ params.weight.reshape(9 * c_in, c).T).reshape(h, w, 3, 3, c_in)
    dpadded = np.zeros((h + 2, w + 2, c_in))
    for dy in range(3):
        for dx in range(3):
            dpadded[dy:dy + h, dx:dx + w] += dcols[:, :, dy, dx]
    return grads, dpadded[1:-1, 1:-1]


# ── Two-stream fusion ─────────────────────────────────────────────────


def two_stream_forward(
    appearance: np.ndarray,
    motion: np.ndarray | None,
    appearance_params: StreamParams,
    motion_params: StreamParams | None,
) -> tuple[np.ndarray, FrontendCache]:
    """concat(stream_a(appearance), stream_m(motion)); motion is skipped when its params are None."""
    feat_a, cache_a = conv3x3_forward(appearance, appearance_params)
    if motion_params is None:
        return feat_a, FrontendCache(cache_a, None)
    if motion is None or motion.shape[:2] != appearance.shape[:2]:
        got = None if motion is None else motion.shape[:2]
        raise ShapeError(f"motion spatial dims {got} do not match appearance {appearance.shape[:2]}")
    feat_m, cache_m = conv3x3_forward(motion, motion_params)
    return np.concatenate([feat_a, feat_m], axis=-1), FrontendCache(cache_a, cache_m)


def two_stream_backward(
    cache: FrontendCache,
    appearance_params: StreamParams,
    motion_params: StreamParams | None,
    upstream: np.ndarray,
) -> tuple[StreamParams, StreamParams | None, np.ndarray, np.ndarray | None]:
    """Gradients for both streams' params and both inputs."""
    c = appearance_params.bias.shape[0]
    width = c if motion_params is None else c + motion_params.bias.shape[0]
    check_shape("fused upstream", upstream, (None, None, width))
    grad_a, d_app = conv3x3_backward(cache.appearance, appearance_params, upstream[..., :c])
    if motion_params is None:
        return grad_a, None, d_app, None
    grad_m, d_mot = conv3x3_backward(cache.motion, motion_params, upstream[..., c:])
    return grad_a, grad_m, d_app, d_mot


# ── Baseline head ─────────────────────────────────────────────────────


def baseline_forward(fused: np.ndarray, params: BaselineParams) -> tuple[np.ndarray, np.ndarray]:
    check_shape("fused", fused, (None, None, params.actor_weight.shape[0]))
    return (
        fused @ params.actor_weight + params.actor_bias,
        fused @ params.action_weight + params.action_bias,
    )


def baseline_backward(
    fused: np.ndarray, params: BaselineParams, grad_actor: np.ndarray, grad_action: np.ndarray
) -> tuple[BaselineParams, np.ndarray]:
    c = fused.shape[-1]
    x = fused.reshape(-1, c)
    ga = grad_actor.reshape(-1, params.actor_weight.shape[1])
    gc = grad_action.reshape(-1, params.action_weight.shape[1])
    if ga.shape[0] != x.shape[0] or gc.shape[0] != x.shape[0]:
        raise ShapeError("baseline upstream does not match the fused feature map")
    grads = BaselineParams(
        actor_weight=x.T @ ga,
        actor_bias=ga.sum(axis=0),
        action_weight=x.T @ gc,
        action_bias=gc.sum(axis=0),
    )
    d_fused = grad_actor @ params.actor_weight.T + grad_action @ params.action_weight.T
    return grads, d_fused
