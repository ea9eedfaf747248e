import json

import numpy as np
import pytest

from evosnn.evaluation import EvaluationRecord
from evosnn.genome import GenomeConfig, random_genome
from evosnn.surrogate import FitError, RegressionTree, TreeParams, feature_names, featurize, fit, predictor_report


def records(n, seed=0, target=None):
    cfg = GenomeConfig(l=2, b=3)
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        g = random_genome(cfg, rng=rng)
        y = target(g) if target else float(rng.uniform(0, 2))
        out.append(EvaluationRecord(g, y, 1.0, 1, 0))
    return out


def test_feature_length():
    cfg = GenomeConfig(l=2, b=3)
    X = featurize([random_genome(cfg, seed=0)])
    assert X.shape == (1, cfg.length + 9) == (1, len(feature_names(cfg)))


def test_fit_too_few_records():
    with pytest.raises(FitError):
        fit(records(1))


def test_zero_variance_single_leaf():
    recs = [EvaluationRecord(r.genome, 0.7, 1.0, 1, 0) for r in records(5)]
    tree = fit(recs)
    assert tree.n_leaves == 1
    assert np.all(tree.predict([r.genome for r in records(20, seed=9)]) == 0.7)


def test_root_split_on_binary_feature():
    X = np.zeros((20, 3))
    X[10:, 0] = 1
    X[:, 1] = np.arange(20) % 3  # distractor
    y = X[:, 0].copy()
    tree = RegressionTree().fit_arrays(X, y)
    assert tree.feature[0] == 0 and tree.threshold[0] == 0.5
    assert tree.n_leaves == 2
    assert sorted([tree.value[tree.left[0]], tree.value[tree.right[0]]]) == [0.0, 1.0]


def test_tie_goes_to_lowest_feature():
    X = np.repeat(np.array([[0.0, 0.0], [1.0, 1.0]]), 6, axis=0)
    y = X[:, 0]
    tree = RegressionTree(TreeParams(min_samples_leaf=1)).fit_arrays(X, y)
    assert tree.feature[0] == 0


def test_leaf_values_are_means_and_every_point_routes():
    recs = records(80, seed=1)
    tree = fit(recs, TreeParams(max_depth=4, min_samples_leaf=5))
    X = featurize([r.genome for r in recs])
    y = np.array([r.f1 for r in recs])
    leaves = tree.apply_arrays(X)
    for leaf in np.unique(leaves):
        assert tree.feature[leaf] == -1
        assert tree.value[leaf] == pytest.approx(y[leaves == leaf].mean())
        assert (leaves == leaf).sum() >= 5
    assert tree.depth() <= 4
    assert np.allclose(tree.predict([r.genome for r in recs]), [tree.value[i] for i in leaves])


def test_predictions_within_target_range():
    recs = records(60, seed=2)
    y = [r.f1 for r in recs]
    pred = fit(recs).predict([random_genome(GenomeConfig(l=2, b=3), seed=s) for s in range(100)])
    assert min(y) <= pred.min() and pred.max() <= max(y)


def test_refit_is_identical():
    recs = records(70, seed=3)
    assert fit(recs).to_json() == fit(recs).to_json()


def test_json_roundtrip():
    recs = records(50, seed=4)
    tree = fit(recs)
    back = RegressionTree.from_dict(json.loads(tree.to_json()))
    gs = [r.genome for r in records(30, seed=5)]
    assert np.array_equal(tree.predict(gs), back.predict(gs))


def test_config_mismatch():
    tree = fit(records(10))
    with pytest.raises(ValueError, match="config"):
        tree.predict([random_genome(GenomeConfig(l=3, b=3), seed=0)])


def test_matches_sklearn():
    sk = pytest.importorskip("sklearn.tree")
    rng = np.random.default_rng(0)
    for trial in range(10):
        X = rng.integers(0, 4, size=(120, 8)).astype(float)
        y = X[:, 2] * 0.5 - X[:, 5] + rng.normal(0, 0.3, 120)
        ours = RegressionTree(TreeParams(max_depth=5, min_samples_leaf=5)).fit_arrays(X, y)
        ref = sk.DecisionTreeRegressor(max_depth=5, min_samples_leaf=5, random_state=0).fit(X, y)
        Xq = rng.integers(0, 4, size=(300, 8)).astype(float)
        assert np.allclose(ours.predict_arrays(Xq), ref.predict(Xq), atol=1e-12)


def test_predictor_report_cases():
    recs = records(30, seed=6, target=lambda g: float(g.genes.sum()))
    tree = fit(recs, TreeParams(min_samples_leaf=1))
    assert predictor_report(tree, recs[:10]) == (1.0, False)
    flipped = [EvaluationRecord(r.genome, -r.f1 + 100, 1.0, 1, 0) for r in recs[:10]]
    assert predictor_report(tree, flipped) == (-1.0, False)
    const = [EvaluationRecord(r.genome, 0.5, 1.0, 1, 0) for r in recs[:8]]
    single = fit(const)
    assert predictor_report(single, recs[:8]) == (0.0, True)
    with pytest.raises(ValueError):
        predictor_report(tree, recs[:2])


def test_fit_uses_only_given_records():
    recs = records(40, seed=7)
    a = fit(recs[:20]).to_json()
    fit(recs)
    assert fit(recs[:20]).to_json() == a
