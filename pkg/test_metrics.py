import numpy as np
import pytest

from actseg.services.core import FramePrediction, LabelMap, ShapeError
from actseg.services.metrics import (
    ConfusionCounts,
    accumulate_counts,
    boundary_band,
    confusion_counts,
    evaluate_all,
    frame_counts,
    global_accuracy,
    label_boundaries,
    mean_class_accuracy,
    mean_class_iou,
    per_class_accuracy,
    per_class_iou,
    render_category_table,
    render_table,
)
from conftest import small_taxonomy


def labels(rows) -> LabelMap:
    return LabelMap(np.array(rows, dtype=np.uint16))


def counts_of(matrix) -> ConfusionCounts:
    return ConfusionCounts(np.array(matrix, dtype=np.int64), len(matrix))


def random_frame(rng, taxonomy, h, w):
    """Valid GT pairs and arbitrary predictions, with some ignored pixels."""
    pairs = np.array(taxonomy.pairs)
    gt_pairs = pairs[rng.integers(len(pairs), size=(h, w))]
    ignore = rng.random((h, w)) < 0.1
    gt = (LabelMap(gt_pairs[..., 0].astype(np.uint16), ignore), LabelMap(gt_pairs[..., 1].astype(np.uint16), ignore))
    pred = FramePrediction(
        LabelMap(rng.integers(taxonomy.num_actors, size=(h, w)).astype(np.uint16)),
        LabelMap(rng.integers(taxonomy.num_actions, size=(h, w)).astype(np.uint16)),
    )
    return pred, gt


# ── Per-class metrics ──


def test_confusion_counts_of_a_small_map():
    c = confusion_counts(labels([[0, 1], [1, 1]]), labels([[0, 0], [1, 1]]), 2)
    assert c.counts.tolist() == [[1, 1], [0, 2]]


def test_metrics_of_a_two_class_example():
    c = counts_of([[1, 1], [0, 2]])
    assert global_accuracy(c) == 0.75
    assert mean_class_accuracy(c) == 0.75
    assert mean_class_iou(c) == pytest.approx(7 / 12, abs=1e-9)


def test_perfect_prediction_scores_one():
    gt = labels([[0, 1, 2], [2, 1, 0]])
    c = confusion_counts(gt, gt, 3)
    assert global_accuracy(c) == mean_class_accuracy(c) == mean_class_iou(c) == 1.0
    assert (c.counts == np.diag(np.diag(c.counts))).all()


def test_disjoint_prediction_has_zero_iou():
    c = confusion_counts(labels([[1, 1]]), labels([[0, 0]]), 2)
    assert per_class_iou(c) == [0.0, 0.0]
    assert mean_class_iou(c) == 0.0


def test_metrics_are_undefined_without_pixels():
    ignore = np.ones((2, 2), dtype=bool)
    c = confusion_counts(labels([[0, 0], [0, 0]]), LabelMap(np.zeros((2, 2), dtype=np.uint16), ignore), 2)
    assert c.total == 0
    assert global_accuracy(c) is None
    assert mean_class_accuracy(c) is None
    assert mean_class_iou(c) is None


def test_classes_absent_from_the_ground_truth_are_skipped():
    c = counts_of([[3, 1, 0], [0, 0, 0], [0, 0, 0]])
    assert per_class_accuracy(c) == [0.75, None, None]
    assert mean_class_accuracy(c) == 0.75
    assert per_class_iou(c) == [0.75, 0.0, None]


def test_iou_never_exceeds_recall():
    rng = np.random.default_rng(0)
    for _ in range(20):
        c = counts_of(rng.integers(0, 20, size=(4, 4)))
        for acc, iou in zip(per_class_accuracy(c), per_class_iou(c)):
            if acc is not None:
                assert iou <= acc


def test_uniform_random_prediction_is_near_chance():
    rng = np.random.default_rng(1)
    gt = LabelMap(np.repeat([0, 1], 5000).reshape(100, 100).astype(np.uint16))
    pred = LabelMap(rng.integers(0, 2, size=(100, 100)).astype(np.uint16))
    assert mean_class_accuracy(confusion_counts(pred, gt, 2)) == pytest.approx(0.5, abs=0.02)


def test_out_of_range_labels_raise():
    with pytest.raises(ValueError, match="label out of range"):
        confusion_counts(labels([[0, 5]]), labels([[0, 1]]), 2)


def test_mismatched_sizes_raise():
    with pytest.raises(ShapeError):
        confusion_counts(labels([[0, 1]]), labels([[0], [1]]), 2)


# ── Boundary band ──


def test_constant_map_has_no_boundary():
    gt = LabelMap(np.zeros((6, 6), dtype=np.uint16))
    assert not boundary_band(gt, 3).any()


def test_band_around_a_vertical_edge():
    gt = np.zeros((8, 8), dtype=np.uint16)
    gt[:, 4:] = 1
    band = boundary_band(LabelMap(gt), 2)
    assert band[:, 1:7].all()
    assert not band[:, 0].any() and not band[:, 7].any()


def test_label_boundaries_mark_both_sides():
    edge = label_boundaries(np.array([[0, 0, 1, 1]]))
    assert edge.tolist() == [[False, True, True, False]]


def test_negative_radius_is_rejected():
    with pytest.raises(ValueError):
        boundary_band(labels([[0, 1]]), -1)


def test_non_boundary_variant_drops_the_band(taxonomy):
    gt_actor = np.zeros((8, 8), dtype=np.uint16)
    gt_action = np.zeros((8, 8), dtype=np.uint16)
    gt_actor[:, 4:], gt_action[:, 4:] = 1, 1
    pred = FramePrediction(labels(np.zeros((8, 8))), labels(np.zeros((8, 8))))
    counts = frame_counts(pred, (LabelMap(gt_actor), LabelMap(gt_action)), taxonomy, True, 2)
    assert counts[("actor", "all")].total == 64
    assert counts[("actor", "non_boundary")].total == 16


def test_huge_radius_leaves_nothing_to_score(taxonomy):
    gt = np.zeros((8, 8), dtype=np.uint16)
    gt[:, 4:] = 1
    pred = FramePrediction(LabelMap(gt), LabelMap(gt))
    report = evaluate_all([pred], [(LabelMap(gt), LabelMap(gt))], taxonomy, non_boundary=True, radius=20)
    assert report.value("actor", "global_accuracy", "non_boundary") is None
    assert report.value("actor", "global_accuracy") == 1.0


def test_non_boundary_equals_all_on_constant_frames(taxonomy):
    gt = LabelMap(np.ones((5, 5), dtype=np.uint16))
    pred = FramePrediction(labels(np.ones((5, 5))), labels(np.zeros((5, 5))))
    report = evaluate_all([pred], [(gt, gt)], taxonomy, non_boundary=True)
    for setting in ("actor", "action", "actor_action"):
        for metric in ("global_accuracy", "mean_class_accuracy", "mean_class_iou"):
            assert report.value(setting, metric, "non_boundary") == report.value(setting, metric)


# ── Dataset evaluation ──


def test_joint_setting_counts_invalid_predictions_as_misses(taxonomy):
    gt_a, gt_c = labels([[1, 1]]), labels([[1, 1]])
    pred = FramePrediction(labels([[1, 2]]), labels([[1, 2]]))  # (2, 2) is not a valid pair
    report = evaluate_all([pred], [(gt_a, gt_c)], taxonomy)
    assert report.value("actor_action", "global_accuracy") == 0.5
    assert report.value("actor_action", "mean_class_accuracy") == 0.5
    assert report.per_category["cat-run"] == 0.5
    assert report.per_category["BG"] is None


def test_identical_predictions_score_one(taxonomy):
    rng = np.random.default_rng(2)
    frames = [random_frame(rng, taxonomy, 6, 7) for _ in range(3)]
    preds = [FramePrediction(gt[0], gt[1]) for _, gt in frames]
    report = evaluate_all(preds, [gt for _, gt in frames], taxonomy)
    assert all(v == 1.0 for v in report.values.values())


def test_empty_dataset_is_undefined(taxonomy):
    report = evaluate_all([], [], taxonomy)
    assert all(v is None for v in report.values.values())


def test_mismatched_frame_counts_raise(taxonomy):
    rng = np.random.default_rng(3)
    pred, gt = random_frame(rng, taxonomy, 3, 3)
    with pytest.raises(ValueError):
        evaluate_all([pred], [gt, gt], taxonomy)


def test_two_frames_score_like_one_concatenated_frame(taxonomy):
    rng = np.random.default_rng(4)
    (p1, g1), (p2, g2) = random_frame(rng, taxonomy, 5, 4), random_frame(rng, taxonomy, 5, 6)

    def cat(a: LabelMap, b: LabelMap) -> LabelMap:
        return LabelMap(np.hstack([a.labels, b.labels]), ~np.hstack([a.evaluated(), b.evaluated()]))

    joined_pred = FramePrediction(cat(p1.actor, p2.actor), cat(p1.action, p2.action))
    joined_gt = (cat(g1[0], g2[0]), cat(g1[1], g2[1]))
    split = evaluate_all([p1, p2], [g1, g2], taxonomy)
    whole = evaluate_all([joined_pred], [joined_gt], taxonomy)
    assert split.values == whole.values


def test_worker_count_does_not_change_the_result(taxonomy):
    rng = np.random.default_rng(5)
    frames = [random_frame(rng, taxonomy, 6, 6) for _ in range(8)]
    preds, gts = [p for p, _ in frames], [g for _, g in frames]
    assert evaluate_all(preds, gts, taxonomy, workers=1).values == evaluate_all(preds, gts, taxonomy, workers=4).values


def naive_metrics(preds, gts, taxonomy):
    """Per-pixel loops over every frame, then the metric definitions."""
    out = {}
    layouts = {
        "actor": (taxonomy.num_actors, lambda p, g, y, x: (g[0].labels[y, x], p.actor.labels[y, x])),
        "action": (taxonomy.num_actions, lambda p, g, y, x: (g[1].labels[y, x], p.action.labels[y, x])),
    }

    def joint(p, g, y, x):
        gt_pair = taxonomy.pair_index(int(g[0].labels[y, x]), int(g[1].labels[y, x]))
        pred_pair = taxonomy.pair_index(int(p.actor.labels[y, x]), int(p.action.labels[y, x]))
        return gt_pair, taxonomy.num_pairs if pred_pair is None else pred_pair

    layouts["actor_action"] = (taxonomy.num_pairs, joint)
    for setting, (k, lookup) in layouts.items():
        size = k + (1 if setting == "actor_action" else 0)
        m = [[0] * size for _ in range(size)]
        for p, g in zip(preds, gts):
            h, w = g[0].labels.shape
            for y in range(h):
                for x in range(w):
                    if g[0].ignore_mask[y, x] or g[1].ignore_mask[y, x]:
                        continue
                    gi, pi = lookup(p, g, y, x)
                    m[int(gi)][int(pi)] += 1
        total = sum(map(sum, m))
        recalls, ious = [], []
        for i in range(k):
            row = sum(m[i])
            col = sum(m[r][i] for r in range(size))
            if row:
                recalls.append(m[i][i] / row)
            if row + col - m[i][i]:
                ious.append(m[i][i] / (row + col - m[i][i]))
        out[(setting, "global_accuracy", "all")] = sum(m[i][i] for i in range(k)) / total if total else None
        out[(setting, "mean_class_accuracy", "all")] = sum(recalls) / len(recalls) if recalls else None
        out[(setting, "mean_class_iou", "all")] = sum(ious) / len(ious) if ious else None
    return out


def test_dataset_metrics_match_per_pixel_loops():
    taxonomy = small_taxonomy()
    rng = np.random.default_rng(6)
    for _ in range(100):
        frames = [
            random_frame(rng, taxonomy, int(rng.integers(1, 6)), int(rng.integers(1, 6)))
            for _ in range(int(rng.integers(1, 4)))
        ]
        preds, gts = [p for p, _ in frames], [g for _, g in frames]
        assert evaluate_all(preds, gts, taxonomy).values == naive_metrics(preds, gts, taxonomy)


def test_accumulated_counts_are_sums_of_frame_counts(taxonomy):
    rng = np.random.default_rng(7)
    frames = [random_frame(rng, taxonomy, 4, 4) for _ in range(3)]
    totals = accumulate_counts([p for p, _ in frames], [g for _, g in frames], taxonomy)
    expected = sum(
        (frame_counts(p, g, taxonomy)[("action", "all")] for p, g in frames[1:]),
        frame_counts(*frames[0], taxonomy)[("action", "all")],
    )
    assert np.array_equal(totals[("action", "all")].counts, expected.counts)


# ── Tables ──


def test_render_table_lists_every_variant(taxonomy):
    gt = LabelMap(np.ones((5, 5), dtype=np.uint16))
    report = evaluate_all([FramePrediction(gt, gt)], [(gt, gt)], taxonomy, non_boundary=True)
    table = render_table(report, "ours")
    assert "Actor-Action mIoU" in table
    assert "ours (non-boundary)" in table
    assert "100.0" in table


def test_render_category_table_groups_by_actor(taxonomy):
    gt = LabelMap(np.ones((5, 5), dtype=np.uint16))
    report = evaluate_all([FramePrediction(gt, gt)], [(gt, gt)], taxonomy)
    table = render_category_table({"baseline": report, "ours": report}, taxonomy)
    assert "cat" in table and "dog" in table
    assert "jump" in table
    assert "mean" in table
