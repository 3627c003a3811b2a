"""Synthetic actor-action scenes and region-mask corruption.

Every actor is a rectangle or ellipse. Its appearance channels carry a code
for the actor class over the whole shape; its motion channels carry a code
for the action class on a sub-part only (a fraction ``part_fraction`` of the
shape, cut along a random direction) while the rest of the body moves no more
than the noise floor. Ground truth labels the whole shape with both classes,
so a per-pixel classifier can only see the action near the moving part.

Region masks are exact binary masks on the tight bbox of each shape.
:func:`corrupt_masks` degrades them in a fixed order (resolution loss,
erosion/dilation, bbox jitter, drops, spurious regions) to model weaker
mask sources.
"""

from __future__ import annotations

import logging
from collections import Counter
from collections.abc import Sequence
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy import ndimage

from actseg.services.core import FrameSample, LabelMap, RegionMask, RegionSet, Taxonomy

log = logging.getLogger(__name__)

SHAPES = ("rectangle", "ellipse")


class PlacementError(ValueError):
    pass


# ── Scene specification ───────────────────────────────────────────────


@dataclass(frozen=True)
class SceneSpec:
    height: int = 32
    width: int = 32
    min_actors: int = 1
    max_actors: int = 3
    shapes: tuple[str, ...] = SHAPES
    actors: tuple[str, ...] = ("adult", "cat", "dog")
    actions: tuple[str, ...] = ("jumping", "running", "walking")
    appearance_channels: int = 3
    motion_channels: int = 3
    min_size: int = 7
    max_size: int = 12
    signal: float = 1.0
    noise: float = 0.1
    part_fraction: float = 0.25
    allow_overlap: bool = False
    max_attempts: int = 200

    def __post_init__(self) -> None:
        for name in ("shapes", "actors", "actions"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.height < 16 or self.width < 16:
            raise ValueError("frames must be at least 16x16")
        if not (0 < self.part_fraction < 1):
            raise ValueError("part_fraction must be in (0, 1)")
        if not (0 <= self.min_actors <= self.max_actors):
            raise ValueError("need 0 <= min_actors <= max_actors")
        if not (1 <= self.min_size <= self.max_size <= min(self.height, self.width)):
            raise ValueError("shape sizes must fit in the frame")
        unknown = set(self.shapes) - set(SHAPES)
        if unknown:
            raise ValueError(f"unknown shapes {sorted(unknown)}; choose from {SHAPES}")
        if len(set(self.actors)) != len(self.actors) or len(set(self.actions)) != len(self.actions):
            raise ValueError("actor and action lists must not repeat")
        # binary codes of 1..n must fit in the channel count to stay distinct
        if len(self.actors) >= 2 ** self.appearance_channels:
            raise ValueError("too many actors for the appearance channels")
        if len(self.actions) >= 2 ** self.motion_channels:
            raise ValueError("too many actions for the motion channels")
        if self.noise < 0 or self.signal <= self.noise:
            raise ValueError("need 0 <= noise < signal")

    def to_dict(self) -> dict:
        data = asdict(self)
        for name in ("shapes", "actors", "actions"):
            data[name] = list(data[name])
        return data

    @classmethod
    def from_dict(cls, data: dict) -> SceneSpec:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown scene spec keys: {sorted(unknown)}")
        return cls(**data)

    def class_indices(self, taxonomy: Taxonomy) -> tuple[list[int], list[int]]:
        """Taxonomy indices of the spec's actors and actions, all pairs valid."""
        try:
            actors = [taxonomy.actor_names.index(a) for a in self.actors]
            actions = [taxonomy.action_names.index(c) for c in self.actions]
        except ValueError as e:
            raise ValueError(f"scene class not in taxonomy: {e}") from None
        for a in actors:
            for c in actions:
                if taxonomy.pair_index(a, c) is None:
                    raise ValueError(
                        f"{taxonomy.actor_names[a]}-{taxonomy.action_names[c]} is not a valid pair"
                    )
        return actors, actions


def signature(position: int, channels: int, amplitude: float) -> np.ndarray:
    """Binary code of position + 1 over the channels."""
    code = position + 1
    return np.array([amplitude if code >> bit & 1 else 0.0 for bit in range(channels)])


# ── Scene generation ──────────────────────────────────────────────────


def _shape_mask(kind: str, h: int, w: int) -> np.ndarray:
    if kind == "rectangle":
        return np.ones((h, w), dtype=bool)
    yy, xx = np.mgrid[0:h, 0:w]
    cy, cx = (h - 1) / 2, (w - 1) / 2
    return ((yy - cy) / (h / 2)) ** 2 + ((xx - cx) / (w / 2)) ** 2 <= 1.0


def _moving_part(rng: np.random.Generator, shape: np.ndarray, fraction: float) -> np.ndarray:
    """The ``fraction`` of the shape's pixels furthest along a random direction."""
    ys, xs = np.nonzero(shape)
    angle = rng.uniform(0, 2 * np.pi)
    proj = xs * np.cos(angle) + ys * np.sin(angle)
    count = max(1, int(round(fraction * len(ys))))
    chosen = np.argsort(-proj, kind="stable")[:count]
    part = np.zeros_like(shape)
    part[ys[chosen], xs[chosen]] = True
    return part


def generate_scene(spec: SceneSpec, seed, taxonomy: Taxonomy | None = None, frame_id: str = "") -> FrameSample:
    """One frame; a pure function of (spec, seed)."""
    taxonomy = taxonomy or Taxonomy.default()
    actor_ids, action_ids = spec.class_indices(taxonomy)
    rng = np.random.default_rng(seed)
    h, w = spec.height, spec.width

    appearance = rng.uniform(-spec.noise, spec.noise, (h, w, spec.appearance_channels))
    motion = rng.uniform(-spec.noise, spec.noise, (h, w, spec.motion_channels))
    gt_actor = np.full((h, w), taxonomy.background_actor_index, dtype=np.uint16)
    gt_action = np.full((h, w), taxonomy.background_action_index, dtype=np.uint16)
    occupied = np.zeros((h, w), dtype=bool)
    regions = []

    for _ in range(int(rng.integers(spec.min_actors, spec.max_actors + 1))):
        kind = spec.shapes[int(rng.integers(len(spec.shapes)))]
        a_pos = int(rng.integers(len(actor_ids)))
        c_pos = int(rng.integers(len(action_ids)))
        for _attempt in range(spec.max_attempts):
            sh, sw = rng.integers(spec.min_size, spec.max_size + 1, size=2)
            y0, x0 = int(rng.integers(0, h - sh + 1)), int(rng.integers(0, w - sw + 1))
            local = _shape_mask(kind, int(sh), int(sw))
            full = np.zeros((h, w), dtype=bool)
            full[y0:y0 + sh, x0:x0 + sw] = local
            if spec.allow_overlap or not (full & occupied).any():
                break
        else:
            raise PlacementError(
                f"could not place actor {len(regions) + 1} in {spec.max_attempts} attempts; "
                "use fewer or smaller actors"
            )
        occupied |= full
        part = np.zeros((h, w), dtype=bool)
        part[y0:y0 + sh, x0:x0 + sw] = _moving_part(rng, local, spec.part_fraction)

        appearance[full] += signature(a_pos, spec.appearance_channels, spec.signal)
        motion[part] += signature(c_pos, spec.motion_channels, spec.signal)
        gt_actor[full] = actor_ids[a_pos]
        gt_action[full] = action_ids[c_pos]

        rows, cols = np.nonzero(local)
        bbox = (x0 + cols.min(), y0 + rows.min(), x0 + cols.max() + 1, y0 + rows.max() + 1)
        crop = local[rows.min():rows.max() + 1, cols.min():cols.max() + 1]
        regions.append(RegionMask(bbox, crop.astype(np.float32)))

    return FrameSample(
        appearance=appearance.astype(np.float32),
        motion=motion.astype(np.float32),
        gt_actor=LabelMap(gt_actor),
        gt_action=LabelMap(gt_action),
        regions=RegionSet(tuple(regions), w, h),
        frame_id=frame_id,
    )


def generate_dataset(
    spec: SceneSpec, count: int, seed: int, taxonomy: Taxonomy | None = None
) -> list[FrameSample]:
    """``count`` frames, frame i seeded with (seed, i)."""
    taxonomy = taxonomy or Taxonomy.default()
    return [generate_scene(spec, [seed, i], taxonomy, f"frame_{i:05d}") for i in range(count)]


def class_histogram(samples: Sequence[FrameSample], taxonomy: Taxonomy) -> Counter:
    """Number of actor instances per "actor-action" category."""
    hist: Counter = Counter()
    for sample in samples:
        for region in sample.regions:
            x0, y0, x1, y1 = (int(v) for v in region.bbox)
            inside = region.mask > 0
            a = sample.gt_actor.labels[y0:y1, x0:x1][inside]
            c = sample.gt_action.labels[y0:y1, x0:x1][inside]
            if a.size:
                hist[f"{taxonomy.actor_names[a[0]]}-{taxonomy.action_names[c[0]]}"] += 1
    return hist


# ── Mask corruption ───────────────────────────────────────────────────


@dataclass(frozen=True)
class CorruptionSpec:
    downsample: int = 1
    erode_radius: int = 0
    dilate_radius: int = 0
    jitter: float = 0.0
    drop_rate: float = 0.0
    spurious_rate: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.downsample < 1:
            raise ValueError("downsample factor must be >= 1")
        if self.erode_radius < 0 or self.dilate_radius < 0 or self.jitter < 0:
            raise ValueError("corruption amplitudes must be >= 0")
        if not (0 <= self.drop_rate <= 1 and 0 <= self.spurious_rate <= 1):
            raise ValueError("corruption rates must be in [0, 1]")

    @property
    def is_identity(self) -> bool:
        return self == CorruptionSpec(seed=self.seed)


MASK_PRESETS = {
    "gt": CorruptionSpec(),
    "fine": CorruptionSpec(downsample=2, jitter=0.5, drop_rate=0.05, spurious_rate=0.1),
    "coarse": CorruptionSpec(
        downsample=4, erode_radius=1, jitter=1.5, drop_rate=0.15, spurious_rate=0.3
    ),
}


def mask_preset(name: str, seed: int = 0) -> CorruptionSpec:
    if name not in MASK_PRESETS:
        raise ValueError(f"unknown mask level {name!r}; choose from {sorted(MASK_PRESETS)}")
    preset = MASK_PRESETS[name]
    return CorruptionSpec(**{**asdict(preset), "seed": seed})


def _resample_mask(mask: np.ndarray, factor: int) -> np.ndarray:
    """Block-average at 1/factor resolution, then nearest upsample back."""
    h, w = mask.shape
    ph, pw = -h % factor, -w % factor
    padded = np.pad(mask, ((0, ph), (0, pw)), mode="edge")
    blocks = padded.reshape(padded.shape[0] // factor, factor, padded.shape[1] // factor, factor)
    coarse = blocks.mean(axis=(1, 3))
    return np.repeat(np.repeat(coarse, factor, axis=0), factor, axis=1)[:h, :w]


def _dilate(region: RegionMask, radius: int) -> RegionMask:
    """Grow the mask by ``radius`` cells, extending the bbox to hold it."""
    x0, y0, x1, y1 = region.bbox
    h, w = region.mask.shape
    cell_w, cell_h = (x1 - x0) / w, (y1 - y0) / h
    padded = np.pad(region.mask, radius)
    size = 2 * radius + 1
    grown = ndimage.grey_dilation(padded, size=(size, size), mode="constant", cval=0.0)
    bbox = (x0 - radius * cell_w, y0 - radius * cell_h, x1 + radius * cell_w, y1 + radius * cell_h)
    return RegionMask(bbox, grown)


def _clip_region(region: RegionMask, width: int, height: int) -> RegionMask | None:
    """Crop a region to the frame, keeping mask cells that stay inside."""
    x0, y0, x1, y1 = region.bbox
    h, w = region.mask.shape
    cell_w, cell_h = (x1 - x0) / w, (y1 - y0) / h
    c0 = max(0, int(np.ceil(-x0 / cell_w - 1e-9))) if x0 < 0 else 0
    r0 = max(0, int(np.ceil(-y0 / cell_h - 1e-9))) if y0 < 0 else 0
    c1 = min(w, int(np.floor((width - x0) / cell_w + 1e-9))) if x1 > width else w
    r1 = min(h, int(np.floor((height - y0) / cell_h + 1e-9))) if y1 > height else h
    if c0 >= c1 or r0 >= r1:
        return None
    bbox = (x0 + c0 * cell_w, y0 + r0 * cell_h, x0 + c1 * cell_w, y0 + r1 * cell_h)
    return RegionMask(bbox, region.mask[r0:r1, c0:c1])


def _jitter_box(rng: np.random.Generator, bbox, amount: float, width: int, height: int):
    x0, y0, x1, y1 = np.asarray(bbox) + rng.uniform(-amount, amount, 4)
    x0 = min(max(x0, 0.0), width - 1.0)
    y0 = min(max(y0, 0.0), height - 1.0)
    x1 = min(max(x1, x0 + 1.0), float(width))
    y1 = min(max(y1, y0 + 1.0), float(height))
    return (x0, y0, x1, y1)


def _spurious_region(rng: np.random.Generator, width: int, height: int) -> RegionMask:
    bw = int(rng.integers(3, max(4, width // 3) + 1))
    bh = int(rng.integers(3, max(4, height // 3) + 1))
    x0, y0 = int(rng.integers(0, width - bw + 1)), int(rng.integers(0, height - bh + 1))
    mask = rng.uniform(0.5, 1.0, (bh, bw)).astype(np.float32)
    return RegionMask((x0, y0, x0 + bw, y0 + bh), mask)


def corrupt_masks(regions: RegionSet, spec: CorruptionSpec, stream: int = 0) -> RegionSet:
    """Degrade a region set; a pure function of (regions, spec, stream).

    ``stream`` separates the random draws of different frames under one spec.
    """
    if spec.is_identity:
        return regions
    rng = np.random.default_rng([spec.seed, stream])
    width, height = regions.frame_width, regions.frame_height
    out = []
    emptied = 0
    for region in regions:
        mask = region.mask.astype(np.float64)
        if spec.downsample > 1:
            mask = _resample_mask(mask, spec.downsample)
        if spec.erode_radius:
            size = 2 * spec.erode_radius + 1
            mask = ndimage.grey_erosion(mask, size=(size, size), mode="constant", cval=0.0)
        current = RegionMask(region.bbox, mask)
        if spec.dilate_radius:
            current = _clip_region(_dilate(current, spec.dilate_radius), width, height)
        if current is None or not (current.mask > 0).any():
            emptied += 1
            continue
        bbox = current.bbox
        if spec.jitter:
            bbox = _jitter_box(rng, bbox, spec.jitter, width, height)
        if spec.drop_rate and rng.random() < spec.drop_rate:
            continue
        out.append(RegionMask(bbox, np.clip(current.mask, 0.0, 1.0).astype(np.float32)))

    if spec.spurious_rate:
        for _ in range(max(1, len(regions))):
            if rng.random() < spec.spurious_rate:
                out.append(_spurious_region(rng, width, height))
    if emptied:
        log.warning("Corruption removed %d region(s) whose mask became empty", emptied)
    return RegionSet(tuple(out), width, height)


def corrupt_dataset_regions(
    samples: Sequence[FrameSample], spec: CorruptionSpec, include_gt: bool = False
) -> list[RegionSet]:
    """Per-frame corrupted region sets; ``include_gt`` appends the exact masks."""
    out = []
    for i, sample in enumerate(samples):
        corrupted = corrupt_masks(sample.regions, spec, stream=i)
        if include_gt and not spec.is_identity:
            corrupted = RegionSet(
                corrupted.regions + sample.regions.regions, corrupted.frame_width, corrupted.frame_height
            )
        out.append(corrupted)
    return out
