"""Random forest regression: bagged CART trees with per-node feature subsets.

Five knobs control the forest: the fraction of features tried per split
(mtry), the tree count, bootstrap with or without replacement, the bagged
row fraction, and a minimum leaf size encoded as an exponent u so that the
effective node size is max(1, round(n**u)). Tree i draws all randomness
from a stream keyed by (seed, i), so adding trees never changes existing
ones and fits are identical for any worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _tree
from ._rand import kernel_seed, rng_for, round_half_up
from .dataset import Dataset
from .errors import DataError, ParamError


@dataclass(frozen=True)
class RfHyperParams:
    """Forest configuration; mtry_fraction None means the sqrt(p) rule."""

    mtry_fraction: float | None = None
    num_trees: int = 500
    replace: bool = True
    min_node_size_exponent: float = 0.0
    sample_fraction: float = 1.0

    def __post_init__(self):
        f = self.mtry_fraction
        if f is not None and not 0.0 < f <= 1.0:
            raise ParamError(f"mtry_fraction must be in (0,1], got {f}")
        if not (isinstance(self.num_trees, (int, np.integer)) and self.num_trees >= 1):
            raise ParamError(f"num_trees must be a positive integer, got {self.num_trees}")
        if not 0.0 <= self.min_node_size_exponent <= 1.0:
            raise ParamError(
                f"min_node_size_exponent must be in [0,1], got {self.min_node_size_exponent}"
            )
        if not 0.0 < self.sample_fraction <= 1.0:
            raise ParamError(f"sample_fraction must be in (0,1], got {self.sample_fraction}")

    def effective_mtry(self, p: int) -> int:
        frac = math.sqrt(p) / p if self.mtry_fraction is None else self.mtry_fraction
        return min(p, max(1, round_half_up(frac * p)))

    def effective_min_node(self, n: int) -> int:
        return min(n, max(1, round_half_up(n**self.min_node_size_exponent)))

    def bag_size(self, n: int) -> int:
        return round_half_up(self.sample_fraction * n)

    def to_dict(self) -> dict:
        return {
            "mtry_fraction": self.mtry_fraction,
            "num_trees": int(self.num_trees),
            "replace": bool(self.replace),
            "min_node_size_exponent": float(self.min_node_size_exponent),
            "sample_fraction": float(self.sample_fraction),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RfHyperParams":
        return cls(
            mtry_fraction=d["mtry_fraction"],
            num_trees=int(d["num_trees"]),
            replace=bool(d["replace"]),
            min_node_size_exponent=float(d["min_node_size_exponent"]),
            sample_fraction=float(d["sample_fraction"]),
        )


@dataclass
class RegressionTree:
    """Flat node arrays; feature < 0 marks a leaf holding its value."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    count: np.ndarray

    @property
    def n_nodes(self) -> int:
        return int(self.feature.shape[0])

    @property
    def n_leaves(self) -> int:
        return int((self.feature < 0).sum())

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = _as_feature_matrix(X)
        out = np.zeros(X.shape[0], dtype=np.float64)
        self.add_predictions(X, out)
        return out

    def add_predictions(self, X: np.ndarray, out: np.ndarray) -> None:
        _tree.predict_into(
            self.feature, self.threshold, self.left, self.right, self.value, X, out
        )

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": [float(t) for t in self.threshold],
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": [float(v) for v in self.value],
            "count": self.count.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionTree":
        return cls(
            feature=np.asarray(d["feature"], dtype=np.int32),
            threshold=np.asarray(d["threshold"], dtype=np.float64),
            left=np.asarray(d["left"], dtype=np.int32),
            right=np.asarray(d["right"], dtype=np.int32),
            value=np.asarray(d["value"], dtype=np.float64),
            count=np.asarray(d["count"], dtype=np.int32),
        )


@dataclass
class Forest:
    """A fitted forest; prediction is the mean over tree predictions."""

    trees: list[RegressionTree]
    params: RfHyperParams
    seed: int
    oob_available: bool
    n_features: int = field(default=0)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = _as_feature_matrix(X, expect_p=self.n_features)
        out = np.zeros(X.shape[0], dtype=np.float64)
        for tree in self.trees:
            tree.add_predictions(X, out)
        out /= len(self.trees)
        return out


def _as_feature_matrix(X, expect_p: int | None = None) -> np.ndarray:
    X = np.ascontiguousarray(np.asarray(X, dtype=np.float64))
    if X.ndim != 2:
        raise DataError("feature matrix must be 2-D")
    if expect_p and X.shape[1] != expect_p:
        raise DataError(f"expected {expect_p} feature columns, got {X.shape[1]}")
    if not np.isfinite(X).all():
        raise DataError("feature matrix contains non-finite values")
    return X


def _check_training_data(train: Dataset) -> tuple[np.ndarray, np.ndarray]:
    if not train.is_dense():
        raise DataError(f"dataset {train.name!r} still has missing cells; clean it first")
    X = np.ascontiguousarray(train.features)
    y = np.ascontiguousarray(train.response)
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise DataError(f"dataset {train.name!r} contains non-finite values")
    return X, y


def _draw_multiplicities(rng: np.random.Generator, n: int, size: int, replace: bool) -> np.ndarray:
    """Bag as per-row multiplicities over canonical row indices 0..n-1."""
    if replace:
        draws = rng.integers(0, n, size=size)
    else:
        draws = rng.permutation(n)[:size]
    return np.bincount(draws, minlength=n).astype(np.int64)


def fit_forest(
    train: Dataset, params: RfHyperParams, seed: int = 0, n_jobs: int = 1
) -> Forest:
    """Fit num_trees CART trees on seeded bags of the training rows."""
    X, y = _check_training_data(train)
    n, p = X.shape
    bag_size = params.bag_size(n)
    if bag_size < 1:
        raise ParamError(f"sample_fraction {params.sample_fraction} selects no rows of {n}")
    if not params.replace and bag_size > n:
        raise ParamError("cannot draw more rows than exist without replacement")
    mtry = params.effective_mtry(p)
    min_node = params.effective_min_node(n)
    col_order = _tree.argsort_columns(X)

    bags = [
        _draw_multiplicities(rng_for(seed, 20, i), n, bag_size, params.replace)
        for i in range(params.num_trees)
    ]

    def build(i: int) -> RegressionTree:
        arrays = _tree.grow_forest_tree(
            X, col_order, y, bags[i], mtry, min_node, kernel_seed(seed, 21, i)
        )
        return RegressionTree(*arrays)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            trees = list(pool.map(build, range(params.num_trees)))
    else:
        trees = [build(i) for i in range(params.num_trees)]

    oob = any((bag == 0).any() for bag in bags)
    return Forest(trees=trees, params=params, seed=seed, oob_available=oob, n_features=p)


def predict(model: Forest, features: np.ndarray) -> np.ndarray:
    """Mean prediction over the forest's trees."""
    return model.predict(features)


def best_split(features, response, feature_subset=None, min_node: int = 1):
    """Best variance-reducing (feature, threshold) over the given rows.

    Returns (feature_index, threshold, reduction) or None when no legal
    split strictly improves on the parent. Same split rule as the forest
    grower applies at each node: midpoint thresholds between distinct
    values, ties to the lowest feature index then lowest threshold.
    """
    X = _as_feature_matrix(features)
    y = np.ascontiguousarray(np.asarray(response, dtype=np.float64))
    if y.shape[0] != X.shape[0]:
        raise DataError("response length does not match feature rows")
    if X.shape[0] < 2 or y.min() == y.max():
        return None
    if feature_subset is None:
        feats = np.arange(X.shape[1], dtype=np.int64)
    else:
        feats = np.sort(np.asarray(feature_subset, dtype=np.int64))
        if feats.size and (feats[0] < 0 or feats[-1] >= X.shape[1]):
            raise DataError("feature_subset index out of range")
    idx = np.arange(X.shape[0], dtype=np.int64)
    feat, thr, red = _tree.scan_variance_split(X, y, idx, 0, X.shape[0], feats, min_node)
    if feat < 0:
        return None
    return int(feat), float(thr), float(red)
