import numpy as np
import pytest

from actseg.services.core import FrameSample, LabelMap, RegionMask, RegionSet, Taxonomy
from actseg.services.synthdata import SceneSpec


def small_taxonomy() -> Taxonomy:
    """bg + 2 actors, bg + 2 actions; actor 2 cannot do action 2."""
    return Taxonomy(
        actor_names=("background", "cat", "dog"),
        action_names=("background", "run", "jump"),
        valid_pairs=frozenset({(0, 0), (1, 1), (1, 2), (2, 1)}),
    )


def make_sample(
    height: int = 6,
    width: int = 6,
    actor: np.ndarray | None = None,
    action: np.ndarray | None = None,
    regions: tuple[RegionMask, ...] = (),
    channels: int = 2,
    seed: int = 0,
) -> FrameSample:
    rng = np.random.default_rng(seed)
    actor = np.zeros((height, width), dtype=np.uint16) if actor is None else actor
    action = np.zeros((height, width), dtype=np.uint16) if action is None else action
    return FrameSample(
        appearance=rng.uniform(-1, 1, (height, width, channels)).astype(np.float32),
        motion=rng.uniform(-1, 1, (height, width, channels)).astype(np.float32),
        gt_actor=LabelMap(actor),
        gt_action=LabelMap(action),
        regions=RegionSet(regions, width, height),
        frame_id="f0",
    )


@pytest.fixture
def taxonomy() -> Taxonomy:
    return small_taxonomy()


@pytest.fixture
def tiny_scene() -> SceneSpec:
    return SceneSpec(height=16, width=16, min_actors=1, max_actors=2, min_size=4, max_size=7)
