import json

import numpy as np
import pytest

from actseg.services.core import FramePrediction, LabelMap, Taxonomy
from actseg.services.metrics import evaluate_all
from actseg.services.synthdata import SceneSpec, generate_dataset
from actseg.services.training import LogRecord, ModelSpec, init_params
from actseg.store.datasets import read_dataset, read_predictions, write_dataset, write_predictions
from actseg.store.payloads import (
    MANIFEST,
    ManifestError,
    MissingPayloadError,
    PayloadShapeError,
    TruncatedPayloadError,
    read_payload,
    write_payload,
)
from actseg.store.runs import (
    PARAMS_BIN,
    read_metrics_csv,
    read_params,
    read_training_log,
    write_metrics_csv,
    write_params,
    write_per_category_csv,
    write_training_log,
)


@pytest.fixture
def dataset_dir(tmp_path):
    frames = generate_dataset(SceneSpec(height=16, width=16, min_size=4, max_size=7), 3, seed=1)
    ignore = np.zeros((16, 16), dtype=bool)
    ignore[0, :3] = True
    first = frames[0]
    frames[0] = type(first)(
        first.appearance, first.motion, first.gt_actor.with_ignored(ignore),
        first.gt_action, first.regions, first.frame_id,
    )
    write_dataset(frames, tmp_path / "data", Taxonomy.default())
    return tmp_path / "data", frames


# ── Payloads ──


def test_payload_is_raw_little_endian(tmp_path):
    path = tmp_path / "x.bin"
    write_payload(path, np.array([1.0, 2.0]), "float32")
    assert path.read_bytes() == np.array([1.0, 2.0], dtype="<f4").tobytes()
    assert read_payload(path, (2,), "float32").tolist() == [1.0, 2.0]


def test_missing_payload(tmp_path):
    with pytest.raises(MissingPayloadError, match="missing payload"):
        read_payload(tmp_path / "nope.bin", (2,), "float32")


def test_payload_with_the_wrong_length(tmp_path):
    path = tmp_path / "x.bin"
    write_payload(path, np.zeros(6), "float32")
    with pytest.raises(PayloadShapeError, match="shape mismatch"):
        read_payload(path, (2, 2), "float32")


def test_truncated_payload(tmp_path):
    path = tmp_path / "x.bin"
    path.write_bytes(b"\x00" * 7)
    with pytest.raises(TruncatedPayloadError, match="shape mismatch"):
        read_payload(path, (2,), "float32")


def test_unknown_dtype(tmp_path):
    with pytest.raises(ManifestError):
        write_payload(tmp_path / "x.bin", np.zeros(2), "int8")


# ── Datasets ──


def test_dataset_round_trip_is_bit_exact(dataset_dir):
    path, frames = dataset_dir
    loaded, taxonomy = read_dataset(path)
    assert taxonomy == Taxonomy.default()
    assert [s.frame_id for s in loaded] == [f.frame_id for f in frames]
    for a, b in zip(loaded, frames):
        assert np.array_equal(a.appearance, b.appearance)
        assert np.array_equal(a.motion, b.motion)
        assert np.array_equal(a.gt_actor.labels, b.gt_actor.labels)
        assert np.array_equal(a.gt_action.labels, b.gt_action.labels)
        assert [r.bbox for r in a.regions] == [r.bbox for r in b.regions]
        assert all(np.array_equal(ra.mask, rb.mask) for ra, rb in zip(a.regions, b.regions))
    assert np.array_equal(loaded[0].gt_actor.ignore_mask, frames[0].gt_actor.ignore_mask)
    assert loaded[1].gt_actor.ignore_mask is None


def test_dataset_with_a_deleted_payload(dataset_dir):
    path, _ = dataset_dir
    (path / "00001_motion.bin").unlink()
    with pytest.raises(MissingPayloadError, match="missing payload"):
        read_dataset(path)


def test_dataset_with_a_short_payload(dataset_dir):
    path, _ = dataset_dir
    payload = path / "00000_appearance.bin"
    payload.write_bytes(payload.read_bytes()[:-4])
    with pytest.raises(PayloadShapeError, match="shape mismatch"):
        read_dataset(path)


def test_malformed_manifest(dataset_dir):
    path, _ = dataset_dir
    (path / MANIFEST).write_text("{ not json")
    with pytest.raises(ManifestError):
        read_dataset(path)


def test_manifest_with_a_missing_field(dataset_dir):
    path, _ = dataset_dir
    manifest = json.loads((path / MANIFEST).read_text())
    del manifest["frames"][0]["motion"]
    (path / MANIFEST).write_text(json.dumps(manifest))
    with pytest.raises(ManifestError):
        read_dataset(path)


def test_manifest_with_a_wrong_version(dataset_dir):
    path, _ = dataset_dir
    manifest = json.loads((path / MANIFEST).read_text())
    manifest["format_version"] = 99
    (path / MANIFEST).write_text(json.dumps(manifest))
    with pytest.raises(ManifestError, match="format_version"):
        read_dataset(path)


def test_empty_dataset_round_trip(tmp_path):
    write_dataset([], tmp_path / "empty", Taxonomy.default())
    samples, _ = read_dataset(tmp_path / "empty")
    assert samples == []


def test_predictions_round_trip(tmp_path):
    tax = Taxonomy.default()
    actor = LabelMap(np.array([[1, 0], [2, 7]], dtype=np.uint16))
    action = LabelMap(np.array([[1, 0], [9, 4]], dtype=np.uint16))
    write_predictions([FramePrediction(actor, action)], ["f"], tmp_path / "pred", tax)
    preds, ids = read_predictions(tmp_path / "pred")
    assert ids == ["f"]
    assert np.array_equal(preds[0].actor.labels, actor.labels)
    assert np.array_equal(preds[0].joint.labels, tax.joint_labels(actor.labels, action.labels))


def test_dataset_is_not_a_prediction_set(dataset_dir):
    path, _ = dataset_dir
    with pytest.raises(ManifestError):
        read_predictions(path)


# ── Runs ──


def test_params_round_trip(tmp_path):
    spec = ModelSpec(3, 3, 8, 10, feature_width=2, pool_grid=2, hidden_layers=1, hidden_width=4)
    params = init_params(spec, seed=3)
    write_params(params, tmp_path)
    assert (tmp_path / PARAMS_BIN).stat().st_size == 8 * params.flatten().size
    loaded = read_params(tmp_path)
    assert loaded.spec == spec
    assert loaded.names() == params.names()
    assert np.array_equal(loaded.flatten(), params.flatten())


def test_params_with_a_short_payload(tmp_path):
    params = init_params(ModelSpec(3, 0, 8, 10, feature_width=2, pool_grid=2, hidden_layers=0), seed=0)
    write_params(params, tmp_path)
    (tmp_path / PARAMS_BIN).write_bytes((tmp_path / PARAMS_BIN).read_bytes()[:-8])
    with pytest.raises(PayloadShapeError):
        read_params(tmp_path)


def test_training_log_round_trip(tmp_path):
    path = tmp_path / "log.csv"
    write_training_log([LogRecord(1, 1, 4.123456789123), LogRecord(2, 1, 3.5)], path)
    write_training_log([LogRecord(1, 2, 0.25)], path, append=True)
    assert path.read_text().splitlines() == [
        "iteration,stage,loss",
        "1,1,4.12345679",
        "2,1,3.5",
        "1,2,0.25",
    ]
    assert [r.stage for r in read_training_log(path)] == [1, 1, 2]


def test_metric_tables_round_trip(tmp_path):
    tax = Taxonomy.default()
    gt = LabelMap(np.array([[0, 1], [1, 1]], dtype=np.uint16))
    pred = FramePrediction(LabelMap(np.array([[0, 1], [0, 1]], dtype=np.uint16)), gt)
    report = evaluate_all([pred], [(gt, gt)], tax, non_boundary=True, radius=0)
    write_metrics_csv(report, tmp_path / "metrics.csv")
    write_per_category_csv({"ours": report}, tax, tmp_path / "per_category.csv")
    loaded = read_metrics_csv(tmp_path / "metrics.csv", tmp_path / "per_category.csv")
    assert loaded.values == report.values
    assert loaded.per_category == report.per_category
    header = (tmp_path / "metrics.csv").read_text().splitlines()[0]
    assert header == "setting,metric,variant,value"
    assert "undefined" in (tmp_path / "per_category.csv").read_text()
