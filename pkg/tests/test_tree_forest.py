from __future__ import annotations

import math

import numpy as np
import pytest

from oracles import assert_same_tree, bf_fit_tree
from passthru.tree_forest import (
    AxisSpec,
    DimensionMismatchError,
    EmptyInputError,
    ForestModel,
    Leaf,
    NoSplitsError,
    RegressionTree,
    Split,
    SplitParams,
    TreeError,
    best_split,
    fit_forest,
    fit_tree,
    importance,
    partial_dependence,
    predict,
    predict_many,
)

STEP_X = np.array([[1.0], [2.0], [3.0], [4.0]])
STEP_Y = np.array([0.0, 0.0, 10.0, 10.0])


# ---------------------------------------------------------------- best_split

def test_best_split_hand_example():
    found = best_split(STEP_X, STEP_Y, SplitParams(min_leaf=1))
    assert found is not None
    feature, threshold, gain = found
    assert (feature, threshold) == (0, 2.5)
    assert gain == 25.0  # node mse 25, both children pure


def test_best_split_constant_response():
    assert best_split(STEP_X, np.full(4, 3.3), SplitParams(min_leaf=1)) is None


def test_best_split_respects_min_leaf():
    found = best_split(STEP_X, STEP_Y, SplitParams(min_leaf=2))
    assert found is not None and found[1] == 2.5
    assert best_split(STEP_X, STEP_Y, SplitParams(min_leaf=3)) is None


def test_best_split_tie_breaks_to_lowest_feature_then_threshold():
    # identical split quality on both features and at both boundaries
    x = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0], [1.0, 1.0]])
    y = np.array([0.0, 0.0, 1.0, 1.0])
    found = best_split(x, y, SplitParams(min_leaf=1))
    assert found[0] == 0 and found[1] == 0.5


# ---------------------------------------------------------------- fit_tree

def test_single_row_tree():
    tree = fit_tree(np.array([[3.0]]), np.array([7.5]), SplitParams(min_leaf=1))
    assert isinstance(tree.root, Leaf)
    assert predict(tree, [99.0]) == 7.5


def test_min_leaf_one_purifies_training_data():
    rng = np.random.default_rng(2)
    x = rng.permutation(20).astype(float).reshape(-1, 1)
    y = rng.normal(size=20)
    tree = fit_tree(x, y, SplitParams(min_leaf=1))
    assert np.array_equal(predict_many(tree, x), y)


def test_fit_tree_empty_input():
    with pytest.raises(EmptyInputError):
        fit_tree(np.empty((0, 2)), np.empty(0))
    with pytest.raises(EmptyInputError):
        fit_tree(np.empty((3, 0)), np.zeros(3))


def test_fit_tree_max_depth_zero_is_single_leaf():
    tree = fit_tree(STEP_X, STEP_Y, SplitParams(min_leaf=1, max_depth=0))
    assert isinstance(tree.root, Leaf)
    assert tree.root.prediction == 5.0


def test_tree_matches_brute_force_oracle():
    rng = np.random.default_rng(33)
    for trial in range(30):
        n = int(rng.integers(5, 40))
        k = int(rng.integers(1, 4))
        x = rng.normal(size=(n, k))
        y = rng.normal(size=n)
        min_leaf = int(rng.integers(1, 5))
        tree = fit_tree(x, y, SplitParams(min_leaf=min_leaf))
        ref = bf_fit_tree(x, y, min_leaf)
        assert_same_tree(tree.root, ref, path=f"trial{trial}")


def test_split_admissibility_postorder():
    rng = np.random.default_rng(19)
    x = rng.normal(size=(200, 3))
    y = x[:, 0] + 0.3 * rng.normal(size=200)
    params = SplitParams(min_leaf=7)
    tree = fit_tree(x, y, params)

    def walk(node):
        if isinstance(node, Leaf):
            assert node.n >= params.min_leaf
            return
        assert node.gain > params.min_gain
        combined = (node.left.n * node.left.mse + node.right.n * node.right.mse) / node.n
        assert node.mse - combined == pytest.approx(node.gain, rel=1e-9, abs=1e-12)
        walk(node.left)
        walk(node.right)

    walk(tree.root)


def test_monotone_feature_transform_preserves_structure():
    rng = np.random.default_rng(23)
    x = rng.uniform(0.1, 3.0, size=(60, 2))
    y = np.where(x[:, 0] > 1.5, 2.0, -1.0) + 0.2 * rng.normal(size=60)
    params = SplitParams(min_leaf=5)
    base = fit_tree(x, y, params)
    transformed = x.copy()
    transformed[:, 0] = transformed[:, 0] ** 3  # strictly increasing

    def check(node, tnode, axis_vals, t_axis_vals):
        assert type(node) is type(tnode)
        if isinstance(node, Leaf):
            assert tnode.prediction == node.prediction
            assert tnode.n == node.n
            return
        assert tnode.feature == node.feature
        if node.feature == 0:
            # threshold lands in the same gap between observed values
            below = axis_vals[axis_vals <= node.threshold]
            t_below = t_axis_vals[t_axis_vals <= tnode.threshold]
            assert len(below) == len(t_below)
        else:
            assert tnode.threshold == node.threshold
        check(node.left, tnode.left, axis_vals, t_axis_vals)
        check(node.right, tnode.right, axis_vals, t_axis_vals)

    other = fit_tree(transformed, y, params)
    check(base.root, other.root, np.sort(x[:, 0]), np.sort(transformed[:, 0]))
    # routing of every training row is unchanged
    assert np.array_equal(predict_many(base, x), predict_many(other, transformed))


# ---------------------------------------------------------------- predict

def test_two_leaf_routing():
    tree = fit_tree(STEP_X, STEP_Y, SplitParams(min_leaf=1))
    assert predict(tree, [2.4]) == 0.0
    assert predict(tree, [2.6]) == 10.0
    assert np.array_equal(predict_many(tree, [[2.4], [2.6]]), [0.0, 10.0])


def test_predict_dimension_mismatch():
    tree = fit_tree(STEP_X, STEP_Y, SplitParams(min_leaf=1))
    with pytest.raises(DimensionMismatchError):
        predict(tree, [1.0, 2.0])
    with pytest.raises(DimensionMismatchError):
        predict_many(tree, np.ones((3, 2)))


def test_forest_of_identical_trees_equals_tree():
    forest = fit_forest(STEP_X, STEP_Y, n_trees=25, subsample=1.0,
                        seed=1, params=SplitParams(min_leaf=1))
    tree = fit_tree(STEP_X, STEP_Y, SplitParams(min_leaf=1))
    for probe in ([1.1], [2.5], [3.9]):
        assert predict(forest, probe) == predict(tree, probe)


# ---------------------------------------------------------------- fit_forest

def test_forest_determinism_and_subsample_contract():
    rng = np.random.default_rng(3)
    x = rng.uniform(size=(58, 2))
    y = 10.0 * (x[:, 0] > 0.5) + rng.normal(0, 0.5, 58)
    probe = rng.uniform(size=(40, 2))
    a = fit_forest(x, y, n_trees=60, seed=12)
    b = fit_forest(x, y, n_trees=60, seed=12, n_jobs=4)
    assert np.array_equal(predict_many(a, probe), predict_many(b, probe))
    m = math.ceil(58 * 2 / 3)
    for idx in a.row_indices:
        assert len(np.unique(idx)) == m == len(idx)
    c = fit_forest(x, y, n_trees=60, seed=13)
    assert not np.array_equal(predict_many(a, probe), predict_many(c, probe))


def test_forest_tree_order_permutation_invariance():
    rng = np.random.default_rng(4)
    x = rng.uniform(size=(30, 2))
    y = rng.normal(size=30)
    forest = fit_forest(x, y, n_trees=33, seed=5)
    shuffled = ForestModel(
        trees=tuple(reversed(forest.trees)),
        row_indices=tuple(reversed(forest.row_indices)),
        n_features=forest.n_features,
        subsample=forest.subsample,
        seed=forest.seed,
        params=forest.params,
        feature_names=forest.feature_names,
        feature_min=forest.feature_min,
        feature_max=forest.feature_max,
    )
    probe = rng.uniform(size=(25, 2))
    assert np.array_equal(predict_many(forest, probe), predict_many(shuffled, probe))


def test_forest_global_mean_degenerate_case():
    rng = np.random.default_rng(6)
    x = rng.uniform(size=(12, 1))
    y = rng.normal(size=12)
    forest = fit_forest(x, y, n_trees=10, subsample=1.0, seed=2,
                        params=SplitParams(min_leaf=12))
    assert predict(forest, [0.5]) == pytest.approx(float(y.mean()), abs=1e-15)


def test_forest_recovers_step_function():
    rng = np.random.default_rng(7)
    x = rng.uniform(size=(500, 2))
    y = 10.0 * (x[:, 0] > 0.5) + rng.normal(0, 0.5, 500)
    forest = fit_forest(x, y, n_trees=300, seed=8)
    assert predict(forest, [0.9, 0.5]) == pytest.approx(10.0, abs=1.5)
    assert predict(forest, [0.1, 0.5]) == pytest.approx(0.0, abs=1.5)


def test_forest_needs_rows():
    with pytest.raises(EmptyInputError):
        fit_forest(np.ones((2, 1)), np.ones(2))
    with pytest.raises(TreeError):
        fit_forest(np.arange(9.0).reshape(-1, 1), np.arange(9.0), subsample=0.0)


# ---------------------------------------------------------------- importance

def test_importance_single_informative_feature():
    rng = np.random.default_rng(9)
    x = rng.uniform(size=(80, 2))
    y = np.where(x[:, 0] > 0.5, 3.0, -3.0)
    tree = fit_tree(x, y, SplitParams(min_leaf=5), feature_names=("a", "b"))
    report = importance(tree)
    assert report.share("a") == 1.0
    assert report.share("b") == 0.0


def test_importance_symmetric_dgp():
    shares = []
    for seed in range(5):
        rng = np.random.default_rng(seed)
        x = rng.uniform(size=(300, 2))
        y = np.sin(3 * x[:, 0]) + np.sin(3 * x[:, 1]) + 0.1 * rng.normal(size=300)
        forest = fit_forest(x, y, n_trees=100, seed=seed)
        shares.append(importance(forest).shares[0])
    mean_share = float(np.mean(shares))
    assert 0.4 <= mean_share <= 0.6


def test_importance_removed_feature_has_zero_share():
    rng = np.random.default_rng(10)
    x = rng.uniform(size=(100, 2))
    y = x[:, 0] + x[:, 1] + 0.05 * rng.normal(size=100)
    tree = fit_tree(x, y, SplitParams(min_leaf=5), features=[0])
    report = importance(tree)
    assert report.shares[1] == 0.0
    assert report.shares[0] == 1.0


def test_importance_no_splits():
    tree = fit_tree(np.array([[1.0]]), np.array([2.0]), SplitParams(min_leaf=1))
    with pytest.raises(NoSplitsError):
        importance(tree)


def test_importance_raw_non_negative_and_weighted_variant():
    rng = np.random.default_rng(11)
    x = rng.uniform(size=(120, 2))
    y = np.where(x[:, 0] > 0.4, 1.0, 0.0) + 0.3 * rng.normal(size=120)
    forest = fit_forest(x, y, n_trees=50, seed=3)
    unweighted = importance(forest)
    weighted = importance(forest, weighted=True)
    assert np.all(unweighted.raw >= 0.0) and np.all(weighted.raw >= 0.0)
    assert unweighted.shares.sum() == pytest.approx(1.0)
    assert weighted.shares.sum() == pytest.approx(1.0)


# ---------------------------------------------------------------- partial dependence

def grid_axes(x: np.ndarray, steps: int = 10) -> tuple[AxisSpec, AxisSpec]:
    return (
        AxisSpec("x0", float(x[:, 0].min()), float(x[:, 0].max()), steps),
        AxisSpec("x1", float(x[:, 1].min()), float(x[:, 1].max()), steps),
    )


def test_pd_constant_forest_is_flat():
    rng = np.random.default_rng(12)
    x = rng.uniform(size=(30, 2))
    y = np.full(30, 1.25)
    forest = fit_forest(x, y, n_trees=20, seed=4)
    grid = partial_dependence(forest, grid_axes(x))
    assert np.all(grid.surface == 1.25)


def test_pd_monotone_step_slice():
    rng = np.random.default_rng(13)
    x = rng.uniform(size=(400, 2))
    y = np.where(x[:, 1] > 0.5, 0.3, 0.0) + 0.01 * rng.normal(size=400)
    forest = fit_forest(x, y, n_trees=200, seed=5)
    grid = partial_dependence(forest, grid_axes(x, steps=20), slices=[("x0", 0.5)])
    curve = grid.slices[0].predictions
    drops = np.diff(curve).min()
    assert drops >= -0.02  # non-decreasing up to noise tolerance


def test_pd_shape_and_serialization():
    rng = np.random.default_rng(14)
    x = rng.uniform(size=(40, 2))
    y = rng.normal(size=40)
    forest = fit_forest(x, y, n_trees=10, seed=6)
    axes = grid_axes(x, steps=50)
    grid = partial_dependence(forest, axes, slices=[("x0", 0.5), ("x1", 0.5)])
    assert grid.surface.shape == (50, 50)
    assert grid.surface.size == 2500
    assert np.array_equal(grid.axis_values[0], axes[0].values())
    csv_text = grid.to_csv()
    assert csv_text.splitlines()[0] == "x0,x1,prediction"
    assert len(csv_text.splitlines()) == 1 + 2500
    import json

    payload = json.loads(grid.to_json())
    assert len(payload["surface"]) == 50
    assert len(payload["slices"]) == 2
    slice_lines = grid.slices_to_csv().splitlines()
    assert slice_lines[0] == "fixed_feature,fixed_value,along_feature,along_value,prediction"
    assert len(slice_lines) == 1 + 2 * 50


def test_pd_warns_outside_training_hull():
    rng = np.random.default_rng(15)
    x = rng.uniform(size=(30, 2))
    forest = fit_forest(x, rng.normal(size=30), n_trees=5, seed=7)
    axes = (AxisSpec("x0", -5.0, 5.0, 4), AxisSpec("x1", 0.0, 1.0, 4))
    with pytest.warns(UserWarning):
        partial_dependence(forest, axes)


def test_pd_requires_two_feature_model():
    rng = np.random.default_rng(16)
    x = rng.uniform(size=(30, 3))
    forest = fit_forest(x, rng.normal(size=30), n_trees=5, seed=8)
    with pytest.raises(DimensionMismatchError):
        partial_dependence(forest, (AxisSpec(0, 0, 1, 4), AxisSpec(1, 0, 1, 4)))


def test_axis_spec_validation():
    with pytest.raises(TreeError):
        AxisSpec("x0", 0.0, 1.0, 1)
    with pytest.raises(TreeError):
        AxisSpec("x0", 1.0, 0.0, 5)
