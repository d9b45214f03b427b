import inspect

import numpy as np
import pytest

from opembed.classifiers import (
    FeatProvenance,
    LabeledSet,
    make_labeled_set,
    measure_inference,
    predict,
    predict_proba,
    predict_scores,
    train_dummy,
    train_knn,
    train_linsvm,
    train_logreg,
    train_rf,
)


@pytest.fixture
def separable():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(40, 2)) * 0.4 + np.array([-2.0, 0.0])
    b = rng.normal(size=(40, 2)) * 0.4 + np.array([2.0, 0.0])
    X = np.vstack([a, b])
    y = ["lo"] * 40 + ["hi"] * 40
    return make_labeled_set(X, y)


def accuracy(clf, s):
    got = predict(clf, s.X)
    return np.mean([g == s.classes[t] for g, t in zip(got, s.y)])


def test_make_labeled_set_class_order_and_errors():
    X = np.zeros((3, 2))
    s = make_labeled_set(X, ["b", "a", "b"])
    assert s.classes == ("b", "a")
    assert s.y.tolist() == [0, 1, 0]
    with pytest.raises(ValueError, match="not in classes"):
        make_labeled_set(X, ["b", "a", "c"], classes=("a", "b"))
    with pytest.raises(ValueError, match="aligned"):
        LabeledSet(X, np.array([0, 1]), ("a", "b"))
    with pytest.raises(ValueError, match="range"):
        LabeledSet(X, np.array([0, 1, 2]), ("a", "b"))


def test_training_requires_two_classes():
    s = make_labeled_set(np.zeros((4, 2)), ["a"] * 4)
    for trainer in (train_logreg, train_knn, train_rf, train_linsvm):
        with pytest.raises(ValueError, match="classes"):
            trainer(s)


def test_logreg_separates_toy_set(separable):
    clf = train_logreg(separable, seed=0)
    assert accuracy(clf, separable) == 1.0


def test_logreg_zero_epochs_is_uniform(separable):
    clf = train_logreg(separable, epochs=0)
    p = predict_proba(clf, np.array([3.0, -1.0]))
    assert np.allclose(p, 0.5, atol=1e-15)
    assert predict(clf, np.array([3.0, -1.0])) == separable.classes[0]


def test_logreg_beats_prior_on_planted_signal():
    rng = np.random.default_rng(4)
    n = 300
    y = (rng.random(n) < 0.25).astype(int)
    X = rng.normal(size=(n, 8))
    X[:, 3] += 1.5 * y
    s = make_labeled_set(X, ["neg" if t == 0 else "pos" for t in y])
    clf = train_logreg(s, seed=1)
    prior = max(np.mean(y == 0), np.mean(y == 1))
    assert accuracy(clf, s) > prior


def test_knn_zero_distance_dominates():
    X = np.array([[0.0, 0.0], [1.0, 1.0], [1.1, 1.0], [1.0, 1.1]])
    s = make_labeled_set(X, ["a", "b", "b", "b"])
    clf = train_knn(s, k=4)
    assert predict(clf, np.array([0.0, 0.0])) == "a"


def test_knn_k1_matches_exhaustive_scan(rng):
    X = rng.normal(size=(80, 5))
    y = rng.integers(0, 3, 80)
    s = make_labeled_set(X, [f"c{t}" for t in y], classes=("c0", "c1", "c2"))
    clf = train_knn(s, k=1)
    queries = rng.normal(size=(40, 5))
    got = predict(clf, queries)
    for q, g in zip(queries, got):
        d = np.sqrt(((X - q) ** 2).sum(axis=1))
        assert g == f"c{y[np.argmin(d)]}"


def test_knn_default_k_is_six():
    assert inspect.signature(train_knn).parameters["k"].default == 6
    s = make_labeled_set(np.zeros((3, 1)), ["a", "b", "a"])
    assert train_knn(s).params["k"] == 6


def test_knn_inverse_distance_weighting():
    # one near "a" outweighs two farther "b"s inside the same neighborhood
    X = np.array([[1.0], [3.0], [3.5]])
    s = make_labeled_set(X, ["a", "b", "b"])
    clf = train_knn(s, k=3)
    scores = predict_scores(clf, np.array([[0.0]]))[0]
    assert np.isclose(scores[0], 1.0 / (1.0 + 1e-9))
    assert np.isclose(scores[1], 1.0 / (3.0 + 1e-9) + 1.0 / (3.5 + 1e-9))
    assert predict(clf, np.array([0.0])) == "a"


def test_rf_learns_threshold_concept():
    rng = np.random.default_rng(2)
    X = rng.uniform(-1, 1, size=(200, 3))
    labels = ["hi" if v > 0.3 else "lo" for v in X[:, 0]]
    train = make_labeled_set(X[:140], labels[:140], classes=("lo", "hi"))
    clf = train_rf(train, trees=30, seed=0)
    held = make_labeled_set(X[140:], labels[140:], classes=("lo", "hi"))
    assert accuracy(clf, held) >= 0.95


def test_rf_single_tree_matches_hand_trace():
    # 8 rows designed so the Gini-best first split is x1 <= 0.5 (right side
    # pure), then the left child splits on x0 <= 2.5 into pure leaves
    X = np.array(
        [
            [0.0, 0.0],
            [1.0, 0.0],
            [2.0, 0.0],
            [3.0, 0.0],
            [0.0, 1.0],
            [1.0, 1.0],
            [2.0, 1.0],
            [3.0, 1.0],
        ]
    )
    s = make_labeled_set(X, ["z", "z", "z", "o", "o", "o", "o", "o"])
    clf = train_rf(s, trees=1, bootstrap=False, feature_sample="all")
    tree = clf.params["trees"][0]
    assert tree == {
        "f": 1,
        "t": 0.5,
        "lo": {"f": 0, "t": 2.5, "lo": {"leaf": 0}, "hi": {"leaf": 1}},
        "hi": {"leaf": 1},
    }
    assert predict(clf, np.array([2.9, 0.0])) == "o"
    assert predict(clf, np.array([0.5, 0.2])) == "z"
    assert accuracy(clf, s) == 1.0


def test_rf_default_tree_count():
    assert inspect.signature(train_rf).parameters["trees"].default == 100


def test_linsvm_separates_toy_set(separable):
    clf = train_linsvm(separable, seed=0)
    assert accuracy(clf, separable) == 1.0


def test_linsvm_zero_c_degenerates_to_first_class(separable):
    clf = train_linsvm(separable, c=0.0)
    assert np.array_equal(clf.params["W"], np.zeros_like(clf.params["W"]))
    got = predict(clf, separable.X)
    assert all(g == separable.classes[0] for g in got)
    with pytest.raises(ValueError):
        train_linsvm(separable, c=-1.0)


def test_linsvm_mirror_symmetry(separable, rng):
    clf = train_linsvm(separable, seed=3)
    mirrored = LabeledSet(-separable.X, separable.y, separable.classes)
    clf_m = train_linsvm(mirrored, seed=3)
    probe = rng.normal(size=(20, 2))
    assert predict(clf, probe) == predict(clf_m, -probe)


def test_dummy_predicts_majority_with_smallest_id_ties():
    s = make_labeled_set(np.zeros((4, 2)), ["b", "a", "b", "a"], classes=("a", "b"))
    clf = train_dummy(s)
    assert predict(clf, np.ones(2)) == "a"
    skew = make_labeled_set(np.zeros((3, 2)), ["b", "b", "a"], classes=("a", "b"))
    assert predict(train_dummy(skew), np.ones(2)) == "b"


def test_predictions_stay_in_vocabulary_and_probas_normalize(separable, rng):
    probe = rng.normal(size=(30, 2)) * 5
    for trainer in (train_logreg, train_knn, train_rf, train_linsvm, train_dummy):
        clf = trainer(separable)
        got = predict(clf, probe)
        assert set(got) <= set(separable.classes)
        if clf.kind != "linsvm":
            p = predict_proba(clf, probe)
            assert np.allclose(p.sum(axis=1), 1.0, atol=1e-9)
            assert (p >= 0).all()
    with pytest.raises(ValueError, match="proba"):
        predict_proba(train_linsvm(separable), probe)


def test_trainers_are_deterministic_under_seed(separable, rng):
    probe = rng.normal(size=(25, 2)) * 3
    for trainer, kwargs in (
        (train_logreg, {"seed": 5}),
        (train_knn, {}),
        (train_rf, {"trees": 10, "seed": 5}),
        (train_linsvm, {"seed": 5}),
    ):
        a = trainer(separable, **kwargs)
        b = trainer(separable, **kwargs)
        assert np.array_equal(predict_scores(a, probe), predict_scores(b, probe))


def test_predict_rejects_wrong_dim(separable):
    clf = train_logreg(separable, epochs=1)
    with pytest.raises(ValueError, match="dim"):
        predict(clf, np.zeros(3))


def test_provenance_travels_with_classifier(separable):
    prov = FeatProvenance("neural", "abc123")
    tagged = LabeledSet(separable.X, separable.y, separable.classes, prov)
    clf = train_logreg(tagged, epochs=1)
    assert clf.provenance == prov


def test_measure_inference_mean_is_total_over_n(separable, rng):
    clf = train_logreg(separable, epochs=1)
    stats = measure_inference(clf, rng.normal(size=(50, 2)))
    assert stats.n == 50
    assert np.isclose(stats.mean_ms, stats.per_item_ms.sum() / 50)
    assert np.isclose(stats.median_ms, np.median(stats.per_item_ms))


def test_knn_latency_grows_with_training_size_logreg_does_not(rng):
    d = 16
    queries = rng.normal(size=(60, d))

    def sets(n):
        X = rng.normal(size=(n, d))
        y = ["a" if v > 0 else "b" for v in X[:, 0]]
        return make_labeled_set(X, y, classes=("a", "b"))

    small, large = sets(250), sets(4000)
    knn_small = measure_inference(train_knn(small), queries)
    knn_large = measure_inference(train_knn(large), queries)
    assert knn_large.median_ms > 1.5 * knn_small.median_ms
    lr_small = measure_inference(train_logreg(small, epochs=3), queries)
    lr_large = measure_inference(train_logreg(large, epochs=3), queries)
    assert lr_large.median_ms < 3.0 * lr_small.median_ms
