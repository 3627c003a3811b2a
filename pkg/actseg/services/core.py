"""Domain types shared by every other module.

Dense data is plain ``numpy`` arrays, row-major, with the shapes documented on
each type:

* features ``(H, W, C)``: float32 on disk, float64 inside the model
* label maps ``(H, W)``: unsigned class indices, optional boolean ignore mask
* region masks ``(H_b, W_b)``: probabilities on the box's own grid

The :class:`Taxonomy` owns class names and the set of valid actor-action pairs.
Valid pairs are enumerated in sorted ``(actor, action)`` order, which gives the
dense joint index used by the actor-action evaluation setting.

Everything here is immutable after construction and free of I/O.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from actseg.constants import ACTION_NAMES, ACTOR_ACTIONS, ACTOR_NAMES, BACKGROUND_LABEL
from actseg.utils import category_name


class ShapeError(ValueError):
    """Array shapes do not chain or do not match."""


def check_shape(name: str, array: np.ndarray, shape: tuple) -> None:
    """Raise ShapeError unless array matches shape (None = any size)."""
    if array.ndim != len(shape) or any(
        want is not None and got != want for got, want in zip(array.shape, shape)
    ):
        raise ShapeError(f"{name}: expected shape {shape}, got {array.shape}")


# ── Taxonomy ──────────────────────────────────────────────────────────


@dataclass(frozen=True)
class Taxonomy:
    actor_names: tuple[str, ...]
    action_names: tuple[str, ...]
    valid_pairs: frozenset[tuple[int, int]]
    background_actor_index: int = 0
    background_action_index: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "actor_names", tuple(self.actor_names))
        object.__setattr__(self, "action_names", tuple(self.action_names))
        object.__setattr__(
            self, "valid_pairs", frozenset((int(a), int(c)) for a, c in self.valid_pairs)
        )
        if self.num_actors < 2 or self.num_actions < 2:
            raise ValueError("taxonomy needs background plus at least one class per task")
        if not self.valid_pairs:
            raise ValueError("taxonomy has no valid actor-action pairs")
        for a, c in self.valid_pairs:
            if not (0 <= a < self.num_actors and 0 <= c < self.num_actions):
                raise ValueError(f"valid pair ({a}, {c}) out of range")
        if self.background_pair not in self.valid_pairs:
            raise ValueError("background pair must be a valid pair")

    @property
    def num_actors(self) -> int:
        return len(self.actor_names)

    @property
    def num_actions(self) -> int:
        return len(self.action_names)

    @property
    def background_pair(self) -> tuple[int, int]:
        return (self.background_actor_index, self.background_action_index)

    @cached_property
    def pairs(self) -> tuple[tuple[int, int], ...]:
        """Valid pairs in joint-index order."""
        return tuple(sorted(self.valid_pairs))

    @property
    def num_pairs(self) -> int:
        return len(self.pairs)

    @cached_property
    def pair_table(self) -> np.ndarray:
        """(K_actor, K_action) lookup of joint indices, -1 for invalid pairs."""
        table = np.full((self.num_actors, self.num_actions), -1, dtype=np.int64)
        for idx, (a, c) in enumerate(self.pairs):
            table[a, c] = idx
        table.setflags(write=False)
        return table

    def pair_index(self, actor: int, action: int) -> int | None:
        if not (0 <= actor < self.num_actors):
            raise IndexError(f"actor index {actor} out of range [0, {self.num_actors})")
        if not (0 <= action < self.num_actions):
            raise IndexError(f"action index {action} out of range [0, {self.num_actions})")
        idx = int(self.pair_table[actor, action])
        return idx if idx >= 0 else None

    def pair_decode(self, index: int) -> tuple[int, int]:
        if not (0 <= index < self.num_pairs):
            raise IndexError(f"joint index {index} out of range [0, {self.num_pairs})")
        return self.pairs[index]

    def joint_labels(self, actor: np.ndarray, action: np.ndarray) -> np.ndarray:
        """Per-pixel joint index; invalid pairs map to ``num_pairs``."""
        joint = self.pair_table[actor.astype(np.int64), action.astype(np.int64)]
        return np.where(joint < 0, self.num_pairs, joint)

    def category_names(self) -> list[str]:
        """Joint class names in joint-index order."""
        names = []
        for a, c in self.pairs:
            if (a, c) == self.background_pair:
                names.append(BACKGROUND_LABEL)
            else:
                names.append(category_name(self.actor_names[a], self.action_names[c]))
        return names

    def to_dict(self) -> dict:
        return {
            "actor_names": list(self.actor_names),
            "action_names": list(self.action_names),
            "valid_pairs": [list(p) for p in self.pairs],
            "background_actor_index": self.background_actor_index,
            "background_action_index": self.background_action_index,
        }

    @classmethod
    def from_dict(cls, data: dict) -> Taxonomy:
        return cls(
            actor_names=tuple(data["actor_names"]),
            action_names=tuple(data["action_names"]),
            valid_pairs=frozenset(tuple(p) for p in data["valid_pairs"]),
            background_actor_index=int(data["background_actor_index"]),
            background_action_index=int(data["background_action_index"]),
        )

    @classmethod
    def default(cls) -> Taxonomy:
        """7 actors + background, 9 actions + background, 43 joint classes."""
        pairs = {(0, 0)}
        for actor, actions in ACTOR_ACTIONS.items():
            a = ACTOR_NAMES.index(actor)
            pairs.update((a, ACTION_NAMES.index(c)) for c in actions)
        return cls(ACTOR_NAMES, ACTION_NAMES, frozenset(pairs), 0, 0)


def pair_index(actor: int, action: int, taxonomy: Taxonomy) -> int | None:
    """Dense joint index of a valid pair, None for an invalid one."""
    return taxonomy.pair_index(actor, action)


# ── Regions ───────────────────────────────────────────────────────────


@dataclass(frozen=True)
class RegionMask:
    bbox: tuple[float, float, float, float]  # x0, y0, x1, y1 in frame pixels
    mask: np.ndarray  # (H_b, W_b), values in [0, 1]

    def __post_init__(self) -> None:
        object.__setattr__(self, "bbox", tuple(float(v) for v in self.bbox))
        if len(self.bbox) != 4:
            raise ShapeError(f"bbox needs 4 values, got {len(self.bbox)}")
        check_shape("mask", self.mask, (None, None))


@dataclass(frozen=True)
class RegionSet:
    regions: tuple[RegionMask, ...]
    frame_width: int
    frame_height: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "regions", tuple(self.regions))

    def __len__(self) -> int:
        return len(self.regions)

    def __iter__(self):
        return iter(self.regions)

    def __getitem__(self, index: int) -> RegionMask:
        return self.regions[index]

    def boxes(self) -> np.ndarray:
        """(N, 4) float64 array of bboxes."""
        if not self.regions:
            return np.zeros((0, 4), dtype=np.float64)
        return np.array([r.bbox for r in self.regions], dtype=np.float64)

    def coverage(self) -> np.ndarray:
        """(N, H, W) mask probability of every region at every pixel."""
        out = np.zeros((len(self), self.frame_height, self.frame_width), dtype=np.float64)
        for i, region in enumerate(self.regions):
            out[i] = mask_grid(region, self.frame_width, self.frame_height)
        return out


def _cells(coords: np.ndarray, lo: float, hi: float, cells: int) -> tuple[np.ndarray, np.ndarray]:
    inside = (coords >= lo) & (coords < hi)
    idx = np.floor((coords - lo) * cells / (hi - lo)).astype(np.int64)
    return inside, np.clip(idx, 0, cells - 1)


def mask_grid(region: RegionMask, frame_width: int, frame_height: int) -> np.ndarray:
    """Nearest-cell resampling of a region mask onto the full (H, W) frame."""
    x0, y0, x1, y1 = region.bbox
    h_b, w_b = region.mask.shape
    in_x, col = _cells(np.arange(frame_width, dtype=np.float64), x0, x1, w_b)
    in_y, row = _cells(np.arange(frame_height, dtype=np.float64), y0, y1, h_b)
    values = region.mask.astype(np.float64)[row[:, None], col[None, :]]
    return np.where(in_y[:, None] & in_x[None, :], values, 0.0)


def mask_at_pixel(
    region: RegionMask, px: tuple[int, int], frame_width: int, frame_height: int
) -> float:
    """The region's mask probability at frame pixel (x, y)."""
    x, y = px
    if not (0 <= x < frame_width and 0 <= y < frame_height):
        raise ValueError(f"pixel {px} outside {frame_width}x{frame_height} frame")
    x0, y0, x1, y1 = region.bbox
    if not (x0 <= x < x1 and y0 <= y < y1):
        return 0.0
    h_b, w_b = region.mask.shape
    col = min(max(int(np.floor((x - x0) * w_b / (x1 - x0))), 0), w_b - 1)
    row = min(max(int(np.floor((y - y0) * h_b / (y1 - y0))), 0), h_b - 1)
    return float(region.mask[row, col])


# ── Frames ────────────────────────────────────────────────────────────


@dataclass(frozen=True)
class LabelMap:
    labels: np.ndarray  # (H, W) class indices
    ignore_mask: np.ndarray | None = None  # (H, W) bool, True = excluded

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    def evaluated(self) -> np.ndarray:
        """Boolean mask of pixels that take part in loss and metrics."""
        if self.ignore_mask is None:
            return np.ones(self.labels.shape, dtype=bool)
        return ~self.ignore_mask

    def with_ignored(self, extra: np.ndarray) -> LabelMap:
        """Copy with additional pixels ignored."""
        base = np.zeros(self.labels.shape, dtype=bool) if self.ignore_mask is None else self.ignore_mask
        return LabelMap(self.labels, base | extra)


@dataclass(frozen=True)
class FrameSample:
    appearance: np.ndarray  # (H, W, C_a)
    motion: np.ndarray  # (H, W, C_m)
    gt_actor: LabelMap
    gt_action: LabelMap
    regions: RegionSet
    frame_id: str = field(default="", compare=False)

    @property
    def height(self) -> int:
        return self.appearance.shape[0]

    @property
    def width(self) -> int:
        return self.appearance.shape[1]


@dataclass(frozen=True)
class FramePrediction:
    actor: LabelMap
    action: LabelMap
    joint: LabelMap | None = None  # valid-pair index, num_pairs for an invalid pair


def _label_violations(name: str, labels: LabelMap, limit: int, shape: tuple) -> list[str]:
    problems = []
    if labels.labels.shape != shape:
        return [f"{name}: shape {labels.labels.shape} does not match frame {shape}"]
    if labels.ignore_mask is not None and labels.ignore_mask.shape != shape:
        problems.append(f"{name}: ignore mask shape {labels.ignore_mask.shape} does not match frame")
        return problems
    counted = labels.labels[labels.evaluated()]
    bad = int(np.count_nonzero(counted >= limit))
    if bad:
        problems.append(f"{name}: {bad} label out of range (>= {limit})")
    return problems


def validate_frame(sample: FrameSample, taxonomy: Taxonomy) -> list[str]:
    """Every invariant violation of a frame, as readable strings. Never raises."""
    problems: list[str] = []
    app, mot = sample.appearance, sample.motion
    if app.ndim != 3 or mot.ndim != 3:
        return [f"features must be (H, W, C), got {app.shape} and {mot.shape}"]
    shape = app.shape[:2]
    if mot.shape[:2] != shape:
        problems.append(f"motion shape {mot.shape[:2]} does not match appearance {shape}")
    if min(shape) < 1:
        problems.append(f"empty frame {shape}")
    for name, arr in (("appearance", app), ("motion", mot)):
        if not np.all(np.isfinite(arr)):
            problems.append(f"{name}: non-finite values")

    problems += _label_violations("gt_actor", sample.gt_actor, taxonomy.num_actors, shape)
    problems += _label_violations("gt_action", sample.gt_action, taxonomy.num_actions, shape)
    if not problems:
        both = sample.gt_actor.evaluated() & sample.gt_action.evaluated()
        joint = taxonomy.joint_labels(sample.gt_actor.labels[both], sample.gt_action.labels[both])
        bad = int(np.count_nonzero(joint == taxonomy.num_pairs))
        if bad:
            problems.append(f"gt: {bad} pixels carry an invalid actor-action pair")

    regions = sample.regions
    if (regions.frame_height, regions.frame_width) != shape:
        problems.append(
            f"regions: frame {regions.frame_height}x{regions.frame_width} does not match {shape}"
        )
    for i, region in enumerate(regions):
        x0, y0, x1, y1 = region.bbox
        if not all(np.isfinite(region.bbox)):
            problems.append(f"region {i}: non-finite bbox")
            continue
        if not (x0 < x1 and y0 < y1):
            problems.append(f"region {i}: empty bbox {region.bbox}")
        elif x1 <= 0 or y1 <= 0 or x0 >= regions.frame_width or y0 >= regions.frame_height:
            problems.append(f"region {i}: bbox {region.bbox} outside the frame")
        m = region.mask
        if m.ndim != 2 or m.size == 0:
            problems.append(f"region {i}: mask must be a non-empty 2-D grid, got {m.shape}")
        elif not np.all((m >= 0) & (m <= 1)):
            problems.append(f"region {i}: mask value out of [0,1]")
    return problems
