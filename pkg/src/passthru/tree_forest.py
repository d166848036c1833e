"""Regression trees grown on mean-squared-error reduction, plus bagged forests.

Splitting is exhaustive over midpoints of adjacent observed feature values,
gain-ties break to the lowest feature index then lowest threshold, and forests
subsample two thirds of the rows without replacement per tree with seeds
derived from (master seed, tree index). Identical data, settings and seed give
identical models regardless of worker count.
"""

from __future__ import annotations

import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np

from passthru.errors import PassthruError


class TreeError(PassthruError):
    pass


class EmptyInputError(TreeError):
    pass


class DimensionMismatchError(TreeError):
    pass


class NoSplitsError(TreeError):
    pass


@dataclass(frozen=True)
class SplitParams:
    min_leaf: int = 5
    max_depth: int | None = None
    min_gain: float = 0.0

    def __post_init__(self):
        if self.min_leaf < 1:
            raise TreeError("min_leaf must be >= 1")
        if self.min_gain < 0.0:
            raise TreeError("min_gain must be >= 0")
        if self.max_depth is not None and self.max_depth < 0:
            raise TreeError("max_depth must be >= 0")


@dataclass(frozen=True, eq=False)
class Leaf:
    prediction: float
    n: int
    mse: float


@dataclass(frozen=True, eq=False)
class Split:
    feature: int
    threshold: float
    gain: float
    n: int
    mse: float
    left: "Node"
    right: "Node"


Node = Union[Leaf, Split]


@dataclass(frozen=True, eq=False)
class RegressionTree:
    root: Node
    n_features: int
    params: SplitParams
    feature_names: tuple[str, ...] | None = None


@dataclass(frozen=True, eq=False)
class ForestModel:
    trees: tuple[RegressionTree, ...]
    row_indices: tuple[np.ndarray, ...]
    n_features: int
    subsample: float
    seed: int
    params: SplitParams
    feature_names: tuple[str, ...] | None
    feature_min: np.ndarray
    feature_max: np.ndarray

    @property
    def n_trees(self) -> int:
        return len(self.trees)


def _node_mse(y: np.ndarray) -> float:
    return float(np.mean((y - y.mean()) ** 2))


def _exact_sse(values: np.ndarray) -> float:
    """Sum of squared deviations via exactly rounded sums (order-independent)."""
    m = values.shape[0]
    s = math.fsum(values)
    return max(math.fsum(values * values) - s * s / m, 0.0)


def best_split(
    x: np.ndarray,
    y: np.ndarray,
    params: SplitParams,
    features: Sequence[int] | None = None,
) -> tuple[int, float, float] | None:
    """Max-gain (feature, threshold, gain) over all candidate midpoints, or None.

    gain = mse(node) - (n_L mse_L + n_R mse_R) / n; candidates leaving a child
    below min_leaf are skipped; the best gain must strictly exceed min_gain.
    A fast prefix-sum scan ranks candidates; near-best ones are re-evaluated
    with exactly rounded sums, so ties (identical partitions reachable through
    different features) resolve deterministically to the lowest feature index,
    then the lowest threshold.
    """
    n = y.shape[0]
    if n < 2 * params.min_leaf:
        return None
    if float(y.min()) == float(y.max()):
        return None
    node_sse = _exact_sse(y)

    # per feature: (gains over valid boundaries, thresholds, boundary indices, sorted y)
    scan: list[tuple[int, np.ndarray, np.ndarray, np.ndarray, np.ndarray]] = []
    best_float = -math.inf
    for j in features if features is not None else range(x.shape[1]):
        order = np.argsort(x[:, j], kind="stable")
        xs = x[order, j]
        ys = y[order]
        csum = np.cumsum(ys)
        csumsq = np.cumsum(ys * ys)
        boundaries = np.arange(1, n)
        valid = (
            (xs[1:] > xs[:-1])
            & (boundaries >= params.min_leaf)
            & ((n - boundaries) >= params.min_leaf)
        )
        if not np.any(valid):
            continue
        iv = boundaries[valid]
        sse_l = np.maximum(csumsq[iv - 1] - csum[iv - 1] ** 2 / iv, 0.0)
        sse_r = np.maximum(
            (csumsq[-1] - csumsq[iv - 1]) - (csum[-1] - csum[iv - 1]) ** 2 / (n - iv), 0.0
        )
        gains = (node_sse - sse_l - sse_r) / n
        thresholds = (xs[iv - 1] + xs[iv]) / 2.0
        # adjacent doubles can round the midpoint up to the right value, which
        # would route the boundary row the wrong way; fall back to the left value
        rounded_up = thresholds >= xs[iv]
        if np.any(rounded_up):
            thresholds = np.where(rounded_up, xs[iv - 1], thresholds)
        scan.append((j, gains, thresholds, iv, ys))
        best_float = max(best_float, float(gains.max()))
    if not scan:
        return None

    band = best_float - 1e-9 * max(abs(best_float), node_sse / n)
    best: tuple[float, int, float] | None = None  # (exact gain, feature, threshold)
    for j, gains, thresholds, iv, ys in scan:
        for pos in np.nonzero(gains >= band)[0]:
            i = int(iv[pos])
            exact = (node_sse - _exact_sse(ys[:i]) - _exact_sse(ys[i:])) / n
            threshold = float(thresholds[pos])
            if best is None or exact > best[0] or (
                exact == best[0] and (j, threshold) < (best[1], best[2])
            ):
                best = (exact, j, threshold)
    if best is None or best[0] <= params.min_gain:
        return None
    return best[1], best[2], best[0]


def _validate_xy(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 2 or x.shape[0] == 0 or x.shape[1] == 0:
        raise EmptyInputError("feature matrix must be a non-empty 2-d array")
    if y.shape != (x.shape[0],):
        raise DimensionMismatchError(f"y has shape {y.shape}, expected ({x.shape[0]},)")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise TreeError("features and response must be finite")
    return x, y


def fit_tree(
    x,
    y,
    params: SplitParams = SplitParams(),
    feature_names: Sequence[str] | None = None,
    features: Sequence[int] | None = None,
) -> RegressionTree:
    """Grow a tree by recursive best splits until none is admissible."""
    x, y = _validate_xy(x, y)
    if feature_names is not None and len(feature_names) != x.shape[1]:
        raise DimensionMismatchError("one name per feature column")

    def grow(rows: np.ndarray, depth: int) -> Node:
        ys = y[rows]
        n = rows.shape[0]
        mse = _node_mse(ys)
        prediction = float(ys.mean())
        if params.max_depth is not None and depth >= params.max_depth:
            return Leaf(prediction, n, mse)
        found = best_split(x[rows], ys, params, features)
        if found is None:
            return Leaf(prediction, n, mse)
        feature, threshold, gain = found
        mask = x[rows, feature] <= threshold
        return Split(
            feature=feature,
            threshold=threshold,
            gain=gain,
            n=n,
            mse=mse,
            left=grow(rows[mask], depth + 1),
            right=grow(rows[~mask], depth + 1),
        )

    root = grow(np.arange(x.shape[0]), 0)
    return RegressionTree(
        root=root,
        n_features=x.shape[1],
        params=params,
        feature_names=tuple(feature_names) if feature_names is not None else None,
    )


def _route(node: Node, row: np.ndarray) -> float:
    while isinstance(node, Split):
        node = node.left if row[node.feature] <= node.threshold else node.right
    return node.prediction


def _tree_predict_many(root: Node, x: np.ndarray) -> np.ndarray:
    out = np.empty(x.shape[0])

    def rec(node: Node, idx: np.ndarray) -> None:
        if idx.size == 0:
            return
        if isinstance(node, Leaf):
            out[idx] = node.prediction
            return
        mask = x[idx, node.feature] <= node.threshold
        rec(node.left, idx[mask])
        rec(node.right, idx[~mask])

    rec(root, np.arange(x.shape[0]))
    return out


def predict(model: RegressionTree | ForestModel, row: Sequence[float]) -> float:
    """Single-point prediction; forests average their trees (order-independent)."""
    row = np.asarray(row, dtype=float)
    if row.shape != (model.n_features,):
        raise DimensionMismatchError(f"expected {model.n_features} features, got {row.shape}")
    if isinstance(model, RegressionTree):
        return _route(model.root, row)
    return math.fsum(_route(t.root, row) for t in model.trees) / model.n_trees


def predict_many(model: RegressionTree | ForestModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != model.n_features:
        raise DimensionMismatchError(f"expected (n, {model.n_features}) features")
    if isinstance(model, RegressionTree):
        return _tree_predict_many(model.root, x)
    stacked = np.vstack([_tree_predict_many(t.root, x) for t in model.trees])
    # exact summation keeps the forest mean invariant to tree order
    return np.array([math.fsum(col) for col in stacked.T]) / model.n_trees


def fit_forest(
    x,
    y,
    n_trees: int = 1000,
    subsample: float = 2.0 / 3.0,
    seed: int = 0,
    params: SplitParams = SplitParams(),
    feature_names: Sequence[str] | None = None,
    features: Sequence[int] | None = None,
    n_jobs: int = 1,
) -> ForestModel:
    """Bag `n_trees` trees, each on ceil(subsample * n) distinct rows.

    Tree t draws its rows from a generator seeded by (seed, t), so the model
    is identical for any worker count or execution order.
    """
    x, y = _validate_xy(x, y)
    n = x.shape[0]
    if n < 3:
        raise EmptyInputError("bagging needs at least 3 rows")
    if not 0.0 < subsample <= 1.0:
        raise TreeError("subsample fraction must be in (0, 1]")
    if n_trees < 1:
        raise TreeError("need at least one tree")
    m = math.ceil(subsample * n)

    def one(t: int) -> tuple[RegressionTree, np.ndarray]:
        rng = np.random.default_rng((seed, t))
        idx = np.sort(rng.choice(n, size=m, replace=False))
        tree = fit_tree(x[idx], y[idx], params, feature_names, features)
        return tree, idx

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(one, range(n_trees)))
    else:
        results = [one(t) for t in range(n_trees)]

    return ForestModel(
        trees=tuple(tree for tree, _ in results),
        row_indices=tuple(idx for _, idx in results),
        n_features=x.shape[1],
        subsample=subsample,
        seed=seed,
        params=params,
        feature_names=tuple(feature_names) if feature_names is not None else None,
        feature_min=x.min(axis=0),
        feature_max=x.max(axis=0),
    )


@dataclass(frozen=True, eq=False)
class ImportanceReport:
    feature_names: tuple[str, ...]
    raw: np.ndarray     # average per-node MSE gain for nodes splitting the feature
    shares: np.ndarray  # raw normalized to sum to one
    n_splits: tuple[int, ...]

    def share(self, name: str) -> float:
        return float(self.shares[self.feature_names.index(name)])


def _iter_splits(node: Node) -> Iterable[Split]:
    if isinstance(node, Split):
        yield node
        yield from _iter_splits(node.left)
        yield from _iter_splits(node.right)


def importance(model: RegressionTree | ForestModel, weighted: bool = False) -> ImportanceReport:
    """Per-feature average of node MSE gains, over every split in the model.

    `weighted` switches to node-size weighting for sensitivity checks.
    """
    trees = model.trees if isinstance(model, ForestModel) else (model,)
    k = model.n_features
    gain_sum = np.zeros(k)
    weight_sum = np.zeros(k)
    counts = np.zeros(k, dtype=int)
    for tree in trees:
        for node in _iter_splits(tree.root):
            w = float(node.n) if weighted else 1.0
            gain_sum[node.feature] += w * node.gain
            weight_sum[node.feature] += w
            counts[node.feature] += 1
    if counts.sum() == 0:
        raise NoSplitsError("model has no split nodes")
    raw = np.where(weight_sum > 0, gain_sum / np.where(weight_sum > 0, weight_sum, 1.0), 0.0)
    names = model.feature_names or tuple(f"x{j}" for j in range(k))
    return ImportanceReport(
        feature_names=tuple(names),
        raw=raw,
        shares=raw / raw.sum(),
        n_splits=tuple(int(c) for c in counts),
    )


@dataclass(frozen=True)
class AxisSpec:
    feature: int | str
    minimum: float
    maximum: float
    steps: int

    def __post_init__(self):
        if self.steps < 2:
            raise TreeError("axis needs at least 2 steps")
        if not (self.maximum > self.minimum):
            raise TreeError("axis maximum must exceed its minimum")

    def values(self) -> np.ndarray:
        return np.linspace(self.minimum, self.maximum, self.steps)


@dataclass(frozen=True, eq=False)
class SliceCurve:
    fixed_feature: str
    fixed_value: float
    along_feature: str
    along_values: np.ndarray
    predictions: np.ndarray


@dataclass(frozen=True, eq=False)
class PdGrid:
    axes: tuple[AxisSpec, AxisSpec]
    axis_names: tuple[str, str]
    axis_values: tuple[np.ndarray, np.ndarray]
    surface: np.ndarray  # shape (axes[0].steps, axes[1].steps)
    slices: tuple[SliceCurve, ...] = ()

    def to_csv(self, float_fmt: str = "{:.6g}") -> str:
        lines = [f"{self.axis_names[0]},{self.axis_names[1]},prediction"]
        for i, a in enumerate(self.axis_values[0]):
            for j, b in enumerate(self.axis_values[1]):
                lines.append(
                    ",".join(float_fmt.format(v) for v in (a, b, self.surface[i, j]))
                )
        return "\n".join(lines) + "\n"

    def slices_to_csv(self, float_fmt: str = "{:.6g}") -> str:
        lines = ["fixed_feature,fixed_value,along_feature,along_value,prediction"]
        for s in self.slices:
            for v, pred in zip(s.along_values, s.predictions):
                lines.append(
                    f"{s.fixed_feature},{float_fmt.format(s.fixed_value)},{s.along_feature},"
                    f"{float_fmt.format(v)},{float_fmt.format(pred)}"
                )
        return "\n".join(lines) + "\n"

    def to_json(self, float_fmt: str = "{:.6g}") -> str:
        def f(v: float) -> float:
            return float(float_fmt.format(v))

        payload = {
            "axes": [
                {"feature": name, "values": [f(v) for v in vals]}
                for name, vals in zip(self.axis_names, self.axis_values)
            ],
            "surface": [[f(v) for v in row] for row in self.surface],
            "slices": [
                {
                    "fixed_feature": s.fixed_feature,
                    "fixed_value": f(s.fixed_value),
                    "along_feature": s.along_feature,
                    "along_values": [f(v) for v in s.along_values],
                    "predictions": [f(v) for v in s.predictions],
                }
                for s in self.slices
            ],
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def _feature_index(model: ForestModel, feature: int | str) -> int:
    if isinstance(feature, str):
        names = model.feature_names or tuple(f"x{j}" for j in range(model.n_features))
        if feature not in names:
            raise DimensionMismatchError(f"unknown feature {feature!r}")
        return names.index(feature)
    if not 0 <= feature < model.n_features:
        raise DimensionMismatchError(f"feature index {feature} out of range")
    return int(feature)


def partial_dependence(
    model: ForestModel,
    axes: tuple[AxisSpec, AxisSpec],
    slices: Sequence[tuple[int | str, float]] = (),
) -> PdGrid:
    """Forest predictions over a Cartesian grid of the model's two features.

    With exactly two predictors the surface is the direct prediction, no
    marginalization needed. Slice curves fix one feature and sweep the other
    along its grid axis. Grid points outside the training range warn but run.
    """
    if model.n_features != 2:
        raise DimensionMismatchError("partial dependence grids need a 2-feature model")
    idx = (_feature_index(model, axes[0].feature), _feature_index(model, axes[1].feature))
    if set(idx) != {0, 1}:
        raise DimensionMismatchError("grid axes must cover both model features")

    names = model.feature_names or ("x0", "x1")
    for ax, j in zip(axes, idx):
        if ax.minimum < model.feature_min[j] or ax.maximum > model.feature_max[j]:
            warnings.warn(
                f"axis for {names[j]!r} extends beyond the training range "
                f"[{model.feature_min[j]:g}, {model.feature_max[j]:g}]",
                stacklevel=2,
            )

    vals0 = axes[0].values()
    vals1 = axes[1].values()
    grid = np.empty((vals0.size * vals1.size, 2))
    a, b = np.meshgrid(vals0, vals1, indexing="ij")
    grid[:, idx[0]] = a.ravel()
    grid[:, idx[1]] = b.ravel()
    surface = predict_many(model, grid).reshape(vals0.size, vals1.size)

    curves: list[SliceCurve] = []
    for feature, value in slices:
        j = _feature_index(model, feature)
        other_pos = 0 if idx[0] != j else 1
        other_axis = axes[other_pos]
        other_j = idx[other_pos]
        sweep = other_axis.values()
        pts = np.empty((sweep.size, 2))
        pts[:, j] = value
        pts[:, other_j] = sweep
        curves.append(
            SliceCurve(
                fixed_feature=names[j],
                fixed_value=float(value),
                along_feature=names[other_j],
                along_values=sweep,
                predictions=predict_many(model, pts),
            )
        )
    return PdGrid(
        axes=axes,
        axis_names=(names[idx[0]], names[idx[1]]),
        axis_values=(vals0, vals1),
        surface=surface,
        slices=tuple(curves),
    )
