import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dhcn.errors import ShapeError, ValidationError
from dhcn.metrics import average_precision, evaluate, mean_average_precision, mf_concept, mf_sample
from oracles import brute_force_ap


def test_mf_sample_examples():
    truth = np.array([[1, 1], [1, 0]], dtype=bool)
    pred = np.array([[1, 0], [1, 1]], dtype=bool)
    assert mf_sample(truth, truth) == 1.0
    assert mf_sample(pred, truth) == pytest.approx(2 / 3)
    assert mf_sample(np.zeros_like(truth), truth) == 0.0
    assert mf_sample(np.zeros((2, 2), bool), np.zeros((2, 2), bool)) == 1.0


def test_mf_concept_examples():
    truth = np.array([[1, 1], [1, 0], [0, 1]], dtype=bool)
    pred = np.array([[1, 1], [0, 0], [1, 1]], dtype=bool)  # concept 0: TP1 FP1 FN1
    assert mf_concept(pred, truth) == pytest.approx(0.75)
    assert mf_concept(truth, truth) == 1.0
    assert mf_concept(np.zeros((3, 1), bool), np.zeros((3, 1), bool)) == 1.0


def test_ap_examples():
    assert average_precision([0.9, 0.8, 0.7], [True, False, True]) == pytest.approx(5 / 6)
    assert mean_average_precision([[3, 0], [2, 1], [1, 2]], [[1, 0], [1, 0], [0, 1]]) == 1.0
    # ties are broken by image index
    assert average_precision([1.0, 1.0], [False, True]) == 0.5


@pytest.mark.parametrize("seed", range(20))
def test_map_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    scores = np.round(rng.random((4, 3)), 1)  # coarse values so ties happen
    truth = rng.random((4, 3)) < 0.5
    aps = [brute_force_ap(scores[:, k], truth[:, k]) for k in range(3) if truth[:, k].any()]
    if not aps:
        with pytest.raises(ValidationError, match="mAP undefined"):
            mean_average_precision(scores, truth)
        return
    assert mean_average_precision(scores, truth) == sum(aps) / len(aps)


def test_map_skips_negative_only_concepts():
    assert mean_average_precision([[1.0, 0.3], [0.0, 0.2]], [[1, 0], [0, 0]]) == 1.0
    with pytest.raises(ValidationError):
        mean_average_precision(np.ones((2, 2)), np.zeros((2, 2)))


def test_shape_errors():
    with pytest.raises(ShapeError):
        mf_sample(np.ones((2, 2), bool), np.ones((2, 3), bool))
    with pytest.raises(ShapeError):
        mean_average_precision(np.ones((2, 2)), np.ones((3, 2), bool))


def test_evaluate_report():
    scores = np.array([[0.9, -0.2], [-0.4, 0.3], [0.1, -0.9]])
    truth = np.array([[1, 0], [0, 1], [0, 0]], dtype=bool)
    rep = evaluate(scores, truth)
    assert rep.mf_c == pytest.approx(np.mean([2 / 3, 1.0]))
    assert rep.mf_s == pytest.approx(np.mean([1.0, 1.0, 0.0]))
    assert rep.map == 1.0
    doc = rep.as_dict(["a", "b"])
    assert doc["per_concept"][0] == {"concept": "a", "precision": 0.5, "recall": 1.0, "f1": pytest.approx(2 / 3),
                                     "average_precision": 1.0}
    for v in (rep.mf_s, rep.mf_c, rep.map):
        assert 0.0 <= v <= 1.0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_invariances(seed):
    rng = np.random.default_rng(seed)
    scores = rng.normal(size=(7, 3))
    truth = rng.random((7, 3)) < 0.4
    truth[0] = True
    pred = scores > 0
    perm = rng.permutation(7)
    base = evaluate(scores, truth)
    moved = evaluate(scores[perm], truth[perm])
    assert moved.mf_s == pytest.approx(base.mf_s) and moved.mf_c == pytest.approx(base.mf_c)
    assert moved.map == pytest.approx(base.map)
    assert mean_average_precision(np.exp(scores) * 3 + 1, truth) == base.map
    assert (mf_sample(pred, truth) == 1.0) == (mf_concept(pred, truth) == 1.0) == bool(np.all(pred == truth))
