import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn import metrics as skm

import oracles
from dmhclust.clustering import ClusterAssignment
from dmhclust.errors import DataError, NumericError
from dmhclust.metrics import (MetricsReport, align_clusters_to_labels, calinski_harabasz,
                              classification_metrics, davies_bouldin, evaluate,
                              format_reports_csv, parse_reports_csv)


def _random_clustering(rng, n=30, d=3, K=3):
    X = rng.standard_normal((n, d))
    labels = np.concatenate([np.arange(K), rng.integers(0, K, n - K)])
    rng.shuffle(labels)
    return X, ClusterAssignment(labels, K)


def test_align_examples():
    y = np.array([0, 1, 1, 0, 1])
    np.testing.assert_array_equal(align_clusters_to_labels(ClusterAssignment(y, 2), y), y)
    np.testing.assert_array_equal(align_clusters_to_labels(ClusterAssignment(1 - y, 2), y), y)
    # tie: identity is kept
    np.testing.assert_array_equal(align_clusters_to_labels([0, 1, 0, 1], [0, 0, 1, 1]), [0, 1, 0, 1])
    with pytest.raises(DataError, match="length mismatch"):
        align_clusters_to_labels([0, 1], [0, 1, 1])


def test_align_three_clusters_matches_exhaustive_search():
    rng = np.random.default_rng(0)
    for _ in range(30):
        c = rng.integers(0, 3, 20)
        y = rng.integers(0, 2, 20)
        mapped = align_clusters_to_labels(ClusterAssignment(c, 3), y)
        assert (mapped == y).mean() == pytest.approx(oracles.best_injective_accuracy(c, y), abs=1e-15)
        assert set(np.unique(mapped)) <= {-1, 0, 1}


def test_align_handles_a_declared_but_empty_cluster():
    mapped = align_clusters_to_labels(ClusterAssignment([0, 0, 0], 2), [1, 1, 0])
    np.testing.assert_array_equal(mapped, [1, 1, 1])


def test_classification_examples():
    y = np.array([0, 1, 1, 0])
    res = classification_metrics(y, y)
    assert (res.accuracy, res.precision, res.recall, res.f1) == (1.0, 1.0, 1.0, 1.0)
    y302 = np.repeat([1, 0], 151)
    res = classification_metrics(np.ones(302, int), y302, averaging="binary")
    assert res.counts.tp == 151 and res.counts.fp == 151 and res.counts.n == 302
    assert (res.accuracy, res.recall, res.precision) == (0.5, 1.0, 0.5)
    res = classification_metrics(np.zeros(4, int), [0, 1, 1, 0], averaging="binary")
    assert res.precision == 0.0 and res.degenerate
    with pytest.raises(DataError):
        classification_metrics([0, 1], [0, 1, 1])
    with pytest.raises(DataError):
        classification_metrics([0, 1], [0, 1], averaging="micro")


@settings(max_examples=80, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), n=st.integers(2, 40),
       avg=st.sampled_from(["binary", "macro", "weighted"]))
def test_classification_matches_sklearn(seed, n, avg):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n)
    pred = rng.integers(0, 2, n)
    res = classification_metrics(pred, y, averaging=avg)
    assert res.accuracy == pytest.approx(skm.accuracy_score(y, pred), abs=1e-12)
    kw = dict(average=avg, zero_division=0, labels=[0, 1])
    if avg == "binary":
        kw.pop("labels")
    assert res.precision == pytest.approx(skm.precision_score(y, pred, **kw), abs=1e-12)
    assert res.recall == pytest.approx(skm.recall_score(y, pred, **kw), abs=1e-12)
    assert res.f1 == pytest.approx(skm.f1_score(y, pred, **kw), abs=1e-12)
    if avg == "binary" and res.precision + res.recall > 0:
        assert res.f1 == pytest.approx(2 * res.precision * res.recall / (res.precision + res.recall),
                                       abs=1e-15)


def test_ch_examples():
    X = np.array([[0.0], [0.1], [10.0], [10.1]])
    assert calinski_harabasz(X, ClusterAssignment([0, 0, 1, 1], 2)) == pytest.approx(20000.0, rel=1e-9)
    assert calinski_harabasz(np.array([[0.0], [1.0]]), ClusterAssignment([0, 1], 2)) == math.inf
    with pytest.raises(DataError, match="empty cluster"):
        calinski_harabasz(X, ClusterAssignment([0, 0, 0, 0], 2))


def test_db_examples():
    X = np.array([[0.0], [2.0], [10.0], [12.0]])
    assert davies_bouldin(X, ClusterAssignment([0, 0, 1, 1], 2)) == pytest.approx(0.2, abs=1e-15)
    assert davies_bouldin(np.array([[0.0], [3.0]]), ClusterAssignment([0, 1], 2)) == 0.0
    with pytest.raises(NumericError, match="clusters 0 and 1"):
        davies_bouldin(np.array([[-1.0], [1.0], [0.0]]), ClusterAssignment([0, 0, 1], 2))


def test_ch_db_match_sklearn():
    rng = np.random.default_rng(1)
    for _ in range(20):
        X, a = _random_clustering(rng, K=int(rng.integers(2, 5)))
        assert calinski_harabasz(X, a) == pytest.approx(skm.calinski_harabasz_score(X, a.labels), rel=1e-10)
        assert davies_bouldin(X, a) == pytest.approx(skm.davies_bouldin_score(X, a.labels), rel=1e-10)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), scale=st.floats(0.01, 100.0), shift=st.floats(-50, 50))
def test_ch_db_invariances(seed, scale, shift):
    rng = np.random.default_rng(seed)
    X, a = _random_clustering(rng, n=20, K=3)
    ch, db = calinski_harabasz(X, a), davies_bouldin(X, a)
    Y = scale * X + shift
    assert abs(calinski_harabasz(Y, a) - ch) <= 1e-9 * max(1.0, ch)
    assert abs(davies_bouldin(Y, a) - db) <= 1e-9 * max(1.0, db)
    perm = rng.permutation(3)
    relabelled = ClusterAssignment(perm[a.labels], 3)
    assert abs(calinski_harabasz(X, relabelled) - ch) <= 1e-9 * max(1.0, ch)
    assert abs(davies_bouldin(X, relabelled) - db) <= 1e-9 * max(1.0, db)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), n=st.integers(1, 50))
def test_binary_alignment_is_at_least_half(seed, n):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n)
    c = rng.integers(0, 2, n)
    assert (align_clusters_to_labels(ClusterAssignment(c, 2), y) == y).mean() >= 0.5


def test_evaluate_and_csv_round_trip():
    X = np.array([[0.0], [0.1], [10.0], [10.1]])
    rep = evaluate(X, ClusterAssignment([1, 1, 0, 0], 2), np.array([0, 0, 1, 1]))
    assert rep.accuracy == 1.0 and rep.calinski_harabasz == pytest.approx(20000.0)
    one = evaluate(X, ClusterAssignment([0, 0, 0, 0], 1))
    assert one.degenerate and math.isnan(one.calinski_harabasz) and math.isnan(one.accuracy)
    text = format_reports_csv([("kmedoids", "synthetic", rep)])
    assert text.splitlines()[0] == ("method,source,accuracy,precision,recall,f1,"
                                    "calinski_harabasz,davies_bouldin")
    (method, source, back), = parse_reports_csv(text)
    assert (method, source) == ("kmedoids", "synthetic")
    for f in ("accuracy", "precision", "recall", "f1", "calinski_harabasz", "davies_bouldin"):
        assert getattr(back, f) == getattr(rep, f)
    assert isinstance(back, MetricsReport)
