import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vespa import metrics as m

from . import oracles


def random_batch(seed, max_n=200, max_c=20):
    rng = np.random.default_rng(seed)
    n, c = int(rng.integers(2, max_n + 1)), int(rng.integers(1, max_c + 1))
    labels = rng.random((n, c)) < rng.uniform(0.05, 0.6, size=c)
    labels[0] = True  # every attribute has a positive
    labels[1] = False  # and a negative
    scores = rng.random((n, c))
    if seed % 3 == 0:  # coarse scores exercise ties
        scores = np.round(scores, 1)
    return scores, labels


def test_mean_accuracy_examples():
    y = np.array([[1], [1], [0]])
    assert m.mean_accuracy(y, y) == 1.0
    assert m.mean_accuracy(np.array([[1], [0], [0]]), y) == 0.75
    assert m.mean_accuracy(np.array([[0], [1], [1]]), y) == 0.25


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6))
def test_flipping_predictions_complements_mA(seed):
    scores, labels = random_batch(seed, 50, 8)
    pred = scores >= 0.5
    assert m.mean_accuracy(~pred, labels) == pytest.approx(1 - m.mean_accuracy(pred, labels), abs=1e-12)


def test_mean_accuracy_excludes_single_valued_attributes():
    y = np.array([[1, 1], [0, 1]])
    p = np.array([[1, 0], [0, 0]])
    acc, ok = m.attribute_accuracies(p, y)
    assert ok.tolist() == [True, False] and np.isnan(acc[1])
    assert m.mean_accuracy(p, y) == 1.0
    with pytest.raises(m.MetricError):
        m.mean_accuracy(np.ones((2, 1)), np.ones((2, 1)))


def test_example_based_set_example():
    # Y = {1, 3}, predicted {1, 2} over attributes 0..3
    y = np.array([[0, 1, 0, 1]])
    p = np.array([[0, 1, 1, 0]])
    acc, prec, rec, f1 = m.example_based(p, y)
    assert (acc, prec, rec, f1) == (1 / 3, 1 / 2, 1 / 2, 1 / 2)


def test_example_based_perfect_and_empty_conventions():
    y = np.array([[1, 0], [0, 0], [0, 1]])
    assert m.example_based(y, y) == (1.0, 1.0, 1.0, 1.0)
    # one side empty: ratios with an empty denominator are 0
    assert m.example_based(np.array([[0, 0]]), np.array([[1, 0]])) == (0.0, 0.0, 0.0, 0.0)
    assert m.example_based(np.array([[1, 0]]), np.array([[0, 0]])) == (0.0, 0.0, 0.0, 0.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6))
def test_example_f1_bounds(seed):
    rng = np.random.default_rng(seed)
    p = rng.random((1, 6)) < 0.5
    y = rng.random((1, 6)) < 0.5
    f1 = m.example_based(p, y)[3]
    assert 0 <= f1 <= 1
    if (p | y).any():
        assert (f1 == 0) == (not (p & y).any())


def test_average_precision_example():
    assert m.average_precision([0.9, 0.8, 0.7], [1, 0, 1]) == pytest.approx((1 + 2 / 3) / 2, abs=1e-15)
    assert m.average_precision([0.9, 0.8, 0.7], [1, 0, 1]) == pytest.approx(0.8333, abs=5e-5)


@given(st.lists(st.booleans(), min_size=1, max_size=30).filter(any))
def test_perfect_ranking_gives_ap_one(labels):
    labels = np.array(labels)
    scores = labels.astype(float) + np.linspace(0, 0.5, len(labels))
    assert m.average_precision(scores, labels) == 1.0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_map_invariant_under_monotone_transform(seed):
    scores, labels = random_batch(seed, 60, 6)
    base = m.mean_average_precision(scores, labels)[0]
    assert m.mean_average_precision(np.exp(3 * scores) - 7, labels)[0] == base
    assert m.mean_average_precision(scores**3, labels)[0] == base


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_mA_depends_only_on_binarization(seed):
    scores, labels = random_batch(seed, 60, 6)
    rng = np.random.default_rng(seed)
    # push every score further from the threshold on its own side
    stretched = np.where(scores >= 0.5, 0.5 + (scores - 0.5) * rng.uniform(0, 1, scores.shape), scores * rng.uniform(0, 1, scores.shape))
    assert np.array_equal(m.binarize(stretched), m.binarize(scores))
    assert m.mean_accuracy(m.binarize(stretched), labels) == m.mean_accuracy(m.binarize(scores), labels)


@pytest.mark.parametrize("seed", range(100))
def test_metrics_match_brute_force_oracles(seed):
    scores, labels = random_batch(seed)
    pred = m.binarize(scores)
    p_list, y_list = pred.astype(int).tolist(), labels.astype(int).tolist()
    assert m.mean_accuracy(pred, labels) == oracles.mean_accuracy(p_list, y_list)
    assert m.example_based(pred, labels) == oracles.example_based(p_list, y_list)
    assert m.mean_average_precision(scores, labels)[0] == oracles.mean_average_precision(scores.tolist(), y_list)


def test_view_accuracy_examples():
    t = np.array([0, 0, 1, 2, 2, 2])
    acc, conf = m.view_accuracy(t, t, 3)
    assert acc.tolist() == [1, 1, 1]
    assert np.array_equal(conf, np.diag([2, 1, 3]))
    acc, conf = m.view_accuracy(t, np.zeros(6, dtype=int), 3)
    assert acc.tolist() == [1, 0, 0]
    assert conf[:, 0].tolist() == [2, 1, 3] and conf[:, 1:].sum() == 0


def test_view_accuracy_matches_confusion_oracle():
    rng = np.random.default_rng(0)
    t, p = rng.integers(0, 3, 500), rng.integers(0, 3, 500)
    _, conf = m.view_accuracy(t, p, 3)
    assert conf.tolist() == oracles.confusion(t.tolist(), p.tolist(), 3)


def test_view_accuracy_ignores_unknown_and_requires_labels():
    acc, conf = m.view_accuracy([0, -1, 1], [0, 2, 0], 3)
    assert conf.sum() == 2 and np.isnan(acc[2])
    with pytest.raises(m.MetricError):
        m.view_accuracy([-1, -1], [0, 1], 3)
    with pytest.raises(m.MetricError):
        m.view_accuracy(None, [0, 1], 3)


def test_evaluate_and_records():
    scores, labels = random_batch(7, 80, 5)
    views = np.arange(len(scores)) % 3
    rep = m.evaluate(m.PredictionBatch(scores, labels, views, views))
    assert rep.mA == m.mean_accuracy(scores >= 0.5, labels)
    kv = dict(rep.records())
    assert float(kv["mA"]) == rep.mA
    assert kv["view_accuracy.0"] == "1.0"
    assert "view accuracy: front=100.00" in m.format_table(rep)


def test_evaluate_without_views_prints_notice():
    scores, labels = random_batch(8, 40, 4)
    rep = m.evaluate(m.PredictionBatch(scores, labels))
    assert rep.per_view_accuracy is None
    assert "not reported" in m.format_table(rep)
    assert not any(k.startswith("view") for k, _ in rep.records())


def test_evaluate_reports_excluded_attributes():
    scores = np.array([[0.9, 0.1], [0.2, 0.3]])
    labels = np.array([[1, 0], [0, 0]])
    with pytest.warns(UserWarning, match="excluded"):
        rep = m.evaluate(m.PredictionBatch(scores, labels))
    assert rep.excluded_mA == [1] and rep.excluded_mAP == [1]
