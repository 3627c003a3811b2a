import math
from dataclasses import replace

import numpy as np
import pytest

from actseg.config import BACKGROUND_INIT, BACKGROUND_LR_SCALE
from actseg.services.core import LabelMap
from actseg.services.synthdata import generate_dataset
from actseg.services.training import (
    EmptySupervisionError,
    ModelParams,
    ModelSpec,
    NonFiniteGradientError,
    TrainConfig,
    actor_action_loss,
    cross_entropy_term,
    finite_difference_check,
    init_params,
    predict_probabilities,
    sgd_step,
    train_two_stage,
)


def tiny_spec(motion_channels: int = 3) -> ModelSpec:
    return ModelSpec(
        appearance_channels=3,
        motion_channels=motion_channels,
        num_actors=8,
        num_actions=10,
        feature_width=2,
        pool_grid=2,
        hidden_layers=1,
        hidden_width=4,
    )


def tiny_config(**overrides) -> TrainConfig:
    base = dict(
        stage1_lr_frontend=0.05,
        stage1_lr_backend=0.2,
        stage1_batch=2,
        stage1_iters=4,
        stage2_lr=0.1,
        stage2_batch=1,
        stage2_iters=4,
        seed=7,
        log_every=0,
    )
    return TrainConfig(**(base | overrides))


def scalar_params(**values: float) -> ModelParams:
    return ModelParams(tiny_spec(), {name: np.array([v]) for name, v in values.items()})


@pytest.fixture
def frames(tiny_scene):
    return generate_dataset(tiny_scene, 4, seed=3)


# ── Loss ──


def test_perfect_prediction_has_zero_loss():
    gt = LabelMap(np.array([[1]], dtype=np.uint16))
    p = np.array([[[0.0, 1.0]]])
    loss, g_a, g_c = actor_action_loss(p, p, gt, gt)
    assert loss == 0.0
    assert not g_a.any() and not g_c.any()


def test_single_pixel_loss_sums_both_tasks():
    gt = LabelMap(np.array([[0]], dtype=np.uint16))
    loss, _, _ = actor_action_loss(
        np.array([[[0.5, 0.5]]]), np.array([[[0.25, 0.75]]]), gt, gt
    )
    assert loss == pytest.approx(math.log(2) + math.log(4))
    assert loss == pytest.approx(2.0794, abs=1e-4)


def test_loss_decomposes_into_the_two_cross_entropy_terms():
    rng = np.random.default_rng(0)
    p_a = rng.dirichlet(np.ones(3), size=(4, 5))
    p_c = rng.dirichlet(np.ones(4), size=(4, 5))
    gt_a = LabelMap(rng.integers(0, 3, (4, 5)).astype(np.uint16))
    gt_c = LabelMap(rng.integers(0, 4, (4, 5)).astype(np.uint16))
    both = np.ones((4, 5), dtype=bool)
    loss, _, _ = actor_action_loss(p_a, p_c, gt_a, gt_c)
    expected = cross_entropy_term(p_a, gt_a.labels, both)[0] + cross_entropy_term(p_c, gt_c.labels, both)[0]
    assert loss == pytest.approx(expected)


def test_ignored_pixels_do_not_contribute():
    labels = np.array([[0, 1]], dtype=np.uint16)
    ignore = np.array([[False, True]])
    p = np.array([[[1.0, 0.0], [1.0, 0.0]]])
    loss, g_a, _ = actor_action_loss(p, p, LabelMap(labels, ignore), LabelMap(labels, ignore))
    assert loss == 0.0
    assert not g_a[0, 1].any()


def test_zero_probability_is_clamped():
    gt = LabelMap(np.array([[1]], dtype=np.uint16))
    loss, _, _ = actor_action_loss(np.array([[[1.0, 0.0]]]), np.array([[[0.0, 1.0]]]), gt, gt)
    assert math.isfinite(loss)
    assert loss == pytest.approx(-math.log(1e-12))


def test_fully_ignored_frame_raises():
    ignore = np.ones((2, 2), dtype=bool)
    gt = LabelMap(np.zeros((2, 2), dtype=np.uint16), ignore)
    p = np.full((2, 2, 2), 0.5)
    with pytest.raises(EmptySupervisionError):
        actor_action_loss(p, p, gt, gt)


# ── SGD ──


def test_sgd_scalar_step():
    params = scalar_params(**{"background.actor": 1.0})
    out = sgd_step(params, {"background.actor": np.array([2.0])}, {"background": 0.1})
    assert out.tensors["background.actor"][0] == pytest.approx(0.8)


def test_zero_gradient_leaves_parameters_unchanged():
    params = scalar_params(**{"head.actor.bias": 0.3})
    out = sgd_step(params, {"head.actor.bias": np.zeros(1)}, {"head": 0.5})
    assert out.tensors["head.actor.bias"][0] == 0.3


def test_two_groups_use_their_own_learning_rates():
    params = scalar_params(**{"appearance.bias": 0.0, "baseline.actor.bias": 0.0})
    grads = {"appearance.bias": np.ones(1), "baseline.actor.bias": np.ones(1)}
    out = sgd_step(params, grads, {"frontend": 2.5e-4, "baseline": 5e-3})
    assert out.tensors["appearance.bias"][0] == pytest.approx(-2.5e-4)
    assert out.tensors["baseline.actor.bias"][0] == pytest.approx(-5e-3)


def test_groups_missing_from_the_rate_map_are_frozen():
    params = scalar_params(**{"appearance.bias": 1.0, "head.actor.bias": 1.0})
    grads = {"appearance.bias": np.ones(1), "head.actor.bias": np.ones(1)}
    out = sgd_step(params, grads, {"head": 0.5})
    assert out.tensors["appearance.bias"] is params.tensors["appearance.bias"]
    assert out.tensors["head.actor.bias"][0] == 0.5


def test_non_finite_gradient_names_the_parameter():
    params = scalar_params(**{"head.actor.bias": 1.0})
    with pytest.raises(NonFiniteGradientError) as exc:
        sgd_step(params, {"head.actor.bias": np.array([np.nan])}, {"head": 0.1})
    assert exc.value.name == "head.actor.bias"


def test_momentum_accumulates_between_steps():
    params = scalar_params(**{"head.actor.bias": 0.0})
    grads = {"head.actor.bias": np.ones(1)}
    velocity = {}
    params = sgd_step(params, grads, {"head": 0.1}, momentum=0.9, velocity=velocity)
    params = sgd_step(params, grads, {"head": 0.1}, momentum=0.9, velocity=velocity)
    assert params.tensors["head.actor.bias"][0] == pytest.approx(-0.1 - 0.19)


def test_weight_decay_pulls_towards_zero():
    params = scalar_params(**{"head.actor.bias": 2.0})
    out = sgd_step(params, {"head.actor.bias": np.zeros(1)}, {"head": 0.1}, weight_decay=0.5)
    assert out.tensors["head.actor.bias"][0] == pytest.approx(1.9)


# ── Configuration and parameters ──


def test_paper_preset_values():
    cfg = TrainConfig.preset("paper")
    assert (cfg.stage1_lr_frontend, cfg.stage1_lr_backend, cfg.stage2_lr) == (2.5e-4, 5e-3, 2.5e-4)
    assert (cfg.stage1_batch, cfg.stage1_iters, cfg.stage2_batch, cfg.stage2_iters) == (10, 20000, 1, 80000)
    assert cfg.momentum == 0.0 and cfg.weight_decay == 0.0
    assert cfg.background_lr < cfg.stage2_lr


def test_preset_overrides_and_validation():
    assert TrainConfig.preset("toy", seed=3, stage1_iters=5).stage1_iters == 5
    with pytest.raises(ValueError):
        TrainConfig.preset("nope")
    with pytest.raises(ValueError):
        tiny_config(stage2_lr=0.0)
    with pytest.raises(ValueError):
        tiny_config(stage1_batch=0)


def test_parameter_layout_and_flat_round_trip():
    params = init_params(tiny_spec(), seed=1)
    names = params.names()
    assert names[:4] == ["appearance.weight", "appearance.bias", "motion.weight", "motion.bias"]
    assert names[-2:] == ["background.actor", "background.action"]
    assert params.background_actor[0] == 0.0 and params.background_action[0] == 0.0
    again = params.from_flat(params.flatten())
    assert again.names() == names
    assert np.array_equal(again.flatten(), params.flatten())


def test_rgb_only_model_has_no_motion_stream():
    params = init_params(tiny_spec(motion_channels=0), seed=1)
    assert params.motion is None
    assert not any(n.startswith("motion.") for n in params.names())
    assert params.baseline.actor_weight.shape[0] == 2


def test_init_is_deterministic():
    assert np.array_equal(init_params(tiny_spec(), 5).flatten(), init_params(tiny_spec(), 5).flatten())
    assert not np.array_equal(init_params(tiny_spec(), 5).flatten(), init_params(tiny_spec(), 6).flatten())


def test_background_scores_start_low_except_for_the_background_class():
    params = init_params(replace(tiny_spec(), background_actor_index=2), seed=1)
    assert params.background_actor[2] == 0.0
    assert np.all(np.delete(params.background_actor, 2) == BACKGROUND_INIT)
    assert params.background_action[0] == 0.0
    assert np.all(params.background_action[1:] == BACKGROUND_INIT)


def test_background_lr_defaults_to_a_fraction_of_the_head_lr():
    assert tiny_config().background_lr == pytest.approx(0.1 * BACKGROUND_LR_SCALE)
    assert tiny_config(stage2_lr_background=0.5).background_lr == 0.5
    assert TrainConfig.preset("toy").background_lr == 0.01
    with pytest.raises(ValueError):
        tiny_config(stage2_lr_background=0.0)


# ── Two-stage schedule ──


def test_training_is_deterministic(frames):
    a, log_a = train_two_stage(frames, tiny_spec(), tiny_config())
    b, log_b = train_two_stage(frames, tiny_spec(), tiny_config())
    assert np.array_equal(a.flatten(), b.flatten())
    assert [r.loss for r in log_a] == [r.loss for r in log_b]
    assert [(r.stage, r.iteration) for r in log_a][:1] == [(1, 1)]
    assert len(log_a) == 8


def test_stage_two_leaves_front_end_and_baseline_untouched(frames):
    stage1, _ = train_two_stage(frames, tiny_spec(), tiny_config(), stages=(1,))
    both, _ = train_two_stage(frames, tiny_spec(), tiny_config(), stages=(2,), initial=stage1)
    for name in stage1.names():
        if ModelParams.group_of(name) in ("frontend", "baseline"):
            assert np.array_equal(both.tensors[name], stage1.tensors[name]), name
    assert not np.array_equal(both.background_actor, stage1.background_actor)


def test_stage_two_moves_background_at_its_own_rate(frames):
    stage1, _ = train_two_stage(frames, tiny_spec(), tiny_config(), stages=(1,))
    frozen, _ = train_two_stage(
        frames, tiny_spec(), tiny_config(stage2_lr_background=1e-12), stages=(2,), initial=stage1
    )
    assert np.abs(frozen.background_actor - stage1.background_actor).max() < 1e-9
    assert not np.array_equal(frozen.tensors["head.actor.bias"], stage1.tensors["head.actor.bias"])


def test_trained_region_head_labels_actor_pixels_as_foreground(tiny_scene):
    frames = generate_dataset(tiny_scene, 6, seed=5)
    params, _ = train_two_stage(frames, tiny_spec(), tiny_config(stage1_iters=100, stage2_iters=150))
    hits = 0
    for sample in frames:
        p_actor, _ = predict_probabilities(params, sample)
        hits += np.count_nonzero((p_actor.argmax(axis=-1) > 0) & (sample.gt_actor.labels > 0))
    assert hits > 0


def test_resumed_stage_two_matches_a_single_run(frames):
    full, full_log = train_two_stage(frames, tiny_spec(), tiny_config())
    stage1, log1 = train_two_stage(frames, tiny_spec(), tiny_config(), stages=(1,))
    resumed, log2 = train_two_stage(frames, tiny_spec(), tiny_config(), stages=(2,), initial=stage1)
    assert np.array_equal(full.flatten(), resumed.flatten())
    assert [r.loss for r in full_log] == [r.loss for r in log1 + log2]


def test_stage_one_loss_decreases(tiny_scene):
    frames = generate_dataset(tiny_scene, 12, seed=11)
    _, records = train_two_stage(
        frames, tiny_spec(), tiny_config(stage1_iters=200, stage1_batch=2), stages=(1,)
    )
    losses = [r.loss for r in records]
    assert np.mean(losses[-20:]) < np.mean(losses[:20])


def test_empty_dataset_is_rejected():
    with pytest.raises(ValueError):
        train_two_stage([], tiny_spec(), tiny_config())


# ── Finite differences ──


def test_finite_differences_agree_on_a_linear_map():
    w = np.array([[1.0, -2.0], [0.5, 3.0]])
    inputs = {"x": np.array([0.3, -0.7])}
    analytic = {"x": w.sum(axis=0)}
    err = finite_difference_check(lambda t: float((t["x"] @ w.T).sum()), inputs, analytic, 1e-3)
    assert err < 1e-8


def test_finite_differences_catch_a_wrong_gradient():
    inputs = {"x": np.array([0.3, -0.7])}
    analytic = {"x": np.array([2.1, 2.0])}
    err = finite_difference_check(lambda t: float((2 * t["x"]).sum()), inputs, analytic, 1e-3)
    assert err > 1e-2


def test_finite_differences_restore_the_inputs():
    x = np.array([0.3, -0.7])
    inputs = {"x": x.copy()}
    finite_difference_check(lambda t: float(t["x"].sum()), inputs, {"x": np.ones(2)}, 1e-3)
    assert np.array_equal(inputs["x"], x)
