import json

import numpy as np
import pytest

from dhcn.data import load_dataset, read_feature_file, write_dataset
from dhcn.errors import ValidationError
from dhcn.model import FORMAT_VERSION, load_model, model_to_dict, save_model
from dhcn.synthetic import planted_context_dataset, random_dataset
from dhcn.training import TrainConfig, train


def write_manifest(tmp_path, images, grid=(2, 2), dim=3, concepts=("a", "b"), histograms=False):
    doc = {"grid_rows": grid[0], "grid_cols": grid[1], "feature_dim": dim,
           "features_are_histograms": histograms, "concepts": list(concepts), "images": images}
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(doc))
    return path


def test_minimal_manifest(tmp_path):
    (tmp_path / "f.txt").write_text("# cell features\n1 2 3\n4,5,6\n\n7 8 9\n1 1 1\n")
    ds = load_dataset(write_manifest(tmp_path, [{"id": "x", "feature_file": "f.txt", "labels": ["b"]}]))
    assert ds.features.shape == (1, 4, 3) and ds.grid.n_cells == 4
    np.testing.assert_array_equal(ds.labels, [[-1, 1]])
    np.testing.assert_array_equal(ds.features[0, 1], [4, 5, 6])


def test_manifest_errors(tmp_path):
    (tmp_path / "short.txt").write_text("1 2 3\n4 5 6\n7 8 9\n")
    (tmp_path / "ok.txt").write_text("1 2 3\n" * 4)
    (tmp_path / "wide.txt").write_text("1 2 3\n1 2\n1 2 3\n1 2 3\n")
    with pytest.raises(ValidationError, match="short.txt: expected 4 rows, got 3"):
        load_dataset(write_manifest(tmp_path, [{"id": "x", "feature_file": "short.txt"}]))
    with pytest.raises(ValidationError, match="wide.txt:2"):
        load_dataset(write_manifest(tmp_path, [{"id": "x", "feature_file": "wide.txt"}]))
    with pytest.raises(ValidationError, match="'zebra'"):
        load_dataset(write_manifest(tmp_path, [{"id": "x", "feature_file": "ok.txt", "labels": ["zebra"]}]))
    with pytest.raises(ValidationError, match="duplicate image id"):
        load_dataset(write_manifest(tmp_path, [{"id": "x", "feature_file": "ok.txt"}] * 2))
    with pytest.raises(ValidationError, match="missing field 'feature_file'"):
        load_dataset(write_manifest(tmp_path, [{"id": "x"}]))
    bad = tmp_path / "bad.json"
    bad.write_text("{\n  \"grid_rows\": 2,\n")
    with pytest.raises(ValidationError, match="bad.json:3"):
        load_dataset(bad)
    (tmp_path / "neg.txt").write_text("1 -2 3\n" * 4)
    with pytest.raises(ValidationError, match="nonnegative"):
        load_dataset(write_manifest(tmp_path, [{"id": "x", "feature_file": "neg.txt"}], histograms=True))


def test_empty_image_list(tmp_path):
    ds = load_dataset(write_manifest(tmp_path, []))
    assert ds.n_images == 0 and ds.features.shape == (0, 4, 3) and ds.labels.shape == (0, 2)


def test_dataset_round_trip(tmp_path):
    train_set, _ = planted_context_dataset(n_train=8, n_test=2, seed=4)
    write_dataset(train_set, tmp_path, "train.json")
    back = load_dataset(tmp_path / "train.json")
    np.testing.assert_array_equal(back.features, train_set.features)
    np.testing.assert_array_equal(back.labels, train_set.labels)
    assert back.ids == train_set.ids and back.links == train_set.links and back.histograms


def test_feature_file_nonfinite(tmp_path):
    (tmp_path / "f.txt").write_text("nan 1\n")
    with pytest.raises(ValidationError, match="non-finite"):
        read_feature_file(tmp_path / "f.txt", 1, 2)


@pytest.fixture(scope="module")
def trained():
    train_set, test_set = planted_context_dataset(n_train=20, n_test=10, seed=2)
    cfg = TrainConfig(outer_iters=3, semantic_k=4, init_map="hi_kpca", kpca_dim=6, landmarks=40)
    return train(train_set, cfg).model, test_set


def test_model_round_trip(tmp_path, trained):
    model, test_set = trained
    save_model(model, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    assert json.dumps(model_to_dict(back), sort_keys=True) == json.dumps(model_to_dict(model), sort_keys=True)
    np.testing.assert_array_equal(back.contexts.geometric, model.contexts.geometric)
    np.testing.assert_array_equal(back.init_map.projection, model.init_map.projection)
    assert back.contexts.sem_mask.dtype == bool
    np.testing.assert_array_equal(back.predict_scores(test_set.features, test_set.ids),
                                  model.predict_scores(test_set.features, test_set.ids))


def test_model_file_rejections(tmp_path, trained):
    model, _ = trained
    save_model(model, tmp_path / "m.json")
    text = (tmp_path / "m.json").read_text()
    (tmp_path / "cut.json").write_text(text[: len(text) // 2])
    with pytest.raises(ValidationError, match="truncated"):
        load_model(tmp_path / "cut.json")
    doc = json.loads(text)
    doc["format_version"] = FORMAT_VERSION + 1
    (tmp_path / "v.json").write_text(json.dumps(doc))
    with pytest.raises(ValidationError, match="version"):
        load_model(tmp_path / "v.json")
    doc = json.loads(text)
    del doc["svm"]
    (tmp_path / "s.json").write_text(json.dumps(doc))
    with pytest.raises(ValidationError, match="malformed"):
        load_model(tmp_path / "s.json")
    with pytest.raises(ValidationError, match="cannot read"):
        load_model(tmp_path / "missing.json")


def test_training_images_reuse_their_semantic_rows(trained):
    model, _ = trained
    from dhcn.network import forward_semantic
    final = forward_semantic(model.train_pooled, model.contexts.semantic, model.depth)[-1]
    ids = list(model.train_ids)
    # reconstruct training features is not needed: ids alone select the learned rows
    feats = np.zeros((len(ids), model.grid.n_cells, model.init_map.landmarks.shape[1]))
    np.testing.assert_array_equal(model.final_maps(feats, ids), final)


def test_unseen_rows_point_to_training_images(trained):
    model, test_set = trained
    init = model.initial_maps(test_set.features)
    from dhcn.network import forward_geometric, pool
    init_pooled = pool(forward_geometric(init, model.initial_geometric(), model.depth)[-1])
    rows = model._semantic_rows(init_pooled, test_set.ids, ())
    assert rows.shape == (test_set.n_images, len(model.train_ids))
    np.testing.assert_array_equal((rows > 0).sum(axis=1), model.semantic_k)
    np.testing.assert_allclose(rows.sum(axis=1), 1.0)


def test_prediction_is_per_image(trained):
    model, test_set = trained
    full = model.predict_scores(test_set.features, test_set.ids)
    one = model.predict_scores(test_set.features[3:4], test_set.ids[3:4])
    np.testing.assert_allclose(one[0], full[3], rtol=1e-12)
    assert model.predict_scores(test_set.features[:0], []).shape == (0, len(model.concepts))


def test_cf_model_predicts_without_semantic_state():
    data = random_dataset(n_images=8, seed=5)
    model = train(data, TrainConfig(mode="cf")).model
    assert model.train_pooled is None
    assert model.predict_scores(data.features).shape == (8, 3)
