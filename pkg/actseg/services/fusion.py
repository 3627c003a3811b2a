"""Region-to-pixel fusion and the per-pixel probability path.

Each pixel j gets, per class k, the largest of its candidate scores:

    y[j, k] = max( bg[k],  max_{i : m[i,j] > 0}  m[i,j] * s[i, k] )

``bg`` acts as an implicit full-frame region with m = 1 that always takes
part, so pixels outside every mask still have a score. Ties go to the
background first, then to the lowest region index. The winner of every
(pixel, class) is kept in a :class:`FusionWitness`, which makes the backward
pass an exact routing of upstream gradients. Masks are constants and receive
no gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from actseg.services.core import LabelMap, RegionSet, ShapeError, Taxonomy, check_shape

BACKGROUND = -1


@dataclass(frozen=True)
class RegionScores:
    actor: np.ndarray  # (N, K_actor)
    action: np.ndarray  # (N, K_action)


@dataclass(frozen=True)
class FusionWitness:
    winner: np.ndarray  # (H, W, K) region index or BACKGROUND
    weight: np.ndarray  # (H, W, K) m of the winner (1 for background)


def region_to_pixel_forward(
    regions: RegionSet,
    scores: np.ndarray,
    background_scores: np.ndarray,
    coverage: np.ndarray | None = None,
) -> tuple[np.ndarray, FusionWitness]:
    """Fuse (N, K) region scores into an (H, W, K) score map.

    ``coverage`` may pass a precomputed ``regions.coverage()``.
    """
    n = len(regions)
    k = background_scores.shape[0]
    check_shape("background_scores", background_scores, (k,))
    check_shape("scores", scores, (n, k))
    h, w = regions.frame_height, regions.frame_width
    m = regions.coverage() if coverage is None else coverage
    check_shape("coverage", m, (n, h, w))

    candidates = np.empty((n + 1, h, w, k), dtype=np.result_type(scores, background_scores, np.float64))
    candidates[0] = background_scores
    if n:
        products = m[:, :, :, None] * scores[:, None, None, :]
        candidates[1:] = np.where(m[:, :, :, None] > 0, products, -np.inf)

    # argmax returns the first maximum: background, then lowest region index
    best = np.argmax(candidates, axis=0)
    fused = np.take_along_axis(candidates, best[None], axis=0)[0]

    winner = best - 1
    weight = np.ones((h, w, k), dtype=np.float64)
    if n:
        yy, xx = np.indices((h, w))
        picked = m[np.maximum(winner, 0), yy[..., None], xx[..., None]]
        weight = np.where(winner == BACKGROUND, 1.0, picked)
    return fused, FusionWitness(winner=winner, weight=weight)


def region_to_pixel_backward(
    witness: FusionWitness, regions: RegionSet, upstream: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of the fused map w.r.t. region scores and background scores."""
    n = len(regions)
    if upstream.shape != witness.winner.shape:
        raise ShapeError(
            f"upstream {upstream.shape} does not match witness {witness.winner.shape}"
        )
    if witness.winner.shape[:2] != (regions.frame_height, regions.frame_width):
        raise ShapeError("witness was produced for a different frame")
    if witness.winner.max(initial=BACKGROUND) >= n:
        raise ShapeError("witness refers to regions that are not in the region set")

    k = upstream.shape[-1]
    routed = witness.weight * upstream
    grad_scores = np.zeros((n, k), dtype=np.float64)
    for i in range(n):
        grad_scores[i] = np.where(witness.winner == i, routed, 0.0).sum(axis=(0, 1))
    grad_background = np.where(witness.winner == BACKGROUND, upstream, 0.0).sum(axis=(0, 1))
    return grad_scores, grad_background


def fusion_oracle(regions: RegionSet, scores: np.ndarray, background_scores: np.ndarray) -> np.ndarray:
    """Brute-force triple loop over pixels, classes and regions."""
    h, w, k = regions.frame_height, regions.frame_width, len(background_scores)
    m = regions.coverage()
    out = np.zeros((h, w, k), dtype=np.float64)
    for y in range(h):
        for x in range(w):
            for c in range(k):
                best = float(background_scores[c])
                for i in range(len(regions)):
                    if m[i, y, x] > 0:
                        best = max(best, float(m[i, y, x] * scores[i, c]))
                out[y, x, c] = best
    return out


# ── Probabilities ─────────────────────────────────────────────────────


def softmax_pixelwise(scores: np.ndarray) -> np.ndarray:
    """Numerically stable softmax over the last axis."""
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(probs: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Vector-Jacobian product of the softmax given its output."""
    dot = (upstream * probs).sum(axis=-1, keepdims=True)
    return probs * (upstream - dot)


def joint_probability(
    p_actor: np.ndarray,
    p_action: np.ndarray,
    taxonomy: Taxonomy,
    mask_invalid: bool = False,
) -> np.ndarray:
    """(H, W, K_actor * K_action) outer product, actor-major.

    With ``mask_invalid`` pairs outside the taxonomy are zeroed and each pixel
    renormalised over the valid ones.
    """
    if p_actor.shape[:-1] != p_action.shape[:-1]:
        raise ShapeError(f"spatial dims differ: {p_actor.shape[:-1]} vs {p_action.shape[:-1]}")
    joint = p_actor[..., :, None] * p_action[..., None, :]
    joint = joint.reshape(*p_actor.shape[:-1], -1)
    if mask_invalid:
        keep = (taxonomy.pair_table >= 0).reshape(-1)
        joint = np.where(keep, joint, 0.0)
        total = joint.sum(axis=-1, keepdims=True)
        joint = np.divide(joint, total, out=np.zeros_like(joint), where=total > 0)
    return joint


def argmax_labeling(probs: np.ndarray) -> LabelMap:
    """Most probable class per pixel, lowest index on ties."""
    return LabelMap(np.argmax(probs, axis=-1).astype(np.uint16))
