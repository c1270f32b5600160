"""Regularized gradient tree boosting with squared-error loss.

Each round fits a depth-limited tree to the current gradients (residuals
with flipped sign; hessians are 1 under squared error) on a row subsample,
using an L1/L2-regularized gain, and adds eta times the soft-thresholded
leaf weights to the model. Rounds are strictly sequential; all sampling
comes from streams keyed by (seed, round).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _tree
from ._rand import rng_for, round_half_up
from .dataset import Dataset
from .errors import ParamError
from .rf_engine import RegressionTree, _as_feature_matrix, _check_training_data


@dataclass(frozen=True)
class GbtHyperParams:
    """The eight boosting knobs. lambda_ is the L2 strength, alpha the L1."""

    nrounds: int = 500
    eta: float = 0.3
    subsample: float = 1.0
    max_depth: int = 6
    min_child_weight: float = 1.0
    colsample_bytree: float = 1.0
    alpha: float = 0.0
    lambda_: float = 1.0

    def __post_init__(self):
        if not (isinstance(self.nrounds, (int, np.integer)) and self.nrounds >= 1):
            raise ParamError(f"nrounds must be a positive integer, got {self.nrounds}")
        if not 0.0 < self.eta <= 1.0:
            raise ParamError(f"eta must be in (0,1], got {self.eta}")
        if not 0.0 < self.subsample <= 1.0:
            raise ParamError(f"subsample must be in (0,1], got {self.subsample}")
        if not (isinstance(self.max_depth, (int, np.integer)) and self.max_depth >= 1):
            raise ParamError(f"max_depth must be a positive integer, got {self.max_depth}")
        if not self.min_child_weight > 0.0:
            raise ParamError(f"min_child_weight must be positive, got {self.min_child_weight}")
        if not 0.0 < self.colsample_bytree <= 1.0:
            raise ParamError(f"colsample_bytree must be in (0,1], got {self.colsample_bytree}")
        if self.alpha < 0.0:
            raise ParamError(f"alpha must be non-negative, got {self.alpha}")
        if self.lambda_ < 0.0:
            raise ParamError(f"lambda must be non-negative, got {self.lambda_}")

    def to_dict(self) -> dict:
        return {
            "nrounds": int(self.nrounds),
            "eta": float(self.eta),
            "subsample": float(self.subsample),
            "max_depth": int(self.max_depth),
            "min_child_weight": float(self.min_child_weight),
            "colsample_bytree": float(self.colsample_bytree),
            "alpha": float(self.alpha),
            "lambda": float(self.lambda_),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GbtHyperParams":
        return cls(
            nrounds=int(d["nrounds"]),
            eta=float(d["eta"]),
            subsample=float(d["subsample"]),
            max_depth=int(d["max_depth"]),
            min_child_weight=float(d["min_child_weight"]),
            colsample_bytree=float(d["colsample_bytree"]),
            alpha=float(d["alpha"]),
            lambda_=float(d["lambda"]),
        )


@dataclass
class BoostedModel:
    """base_score plus an ordered list of trees whose leaves carry eta*w."""

    base_score: float
    trees: list[RegressionTree]
    params: GbtHyperParams
    seed: int
    n_features: int = field(default=0)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = _as_feature_matrix(X, expect_p=self.n_features)
        out = np.full(X.shape[0], self.base_score, dtype=np.float64)
        for tree in self.trees:
            tree.add_predictions(X, out)
        return out


def leaf_weight(gradient_sum: float, hessian_sum: float, lam: float, alpha: float) -> float:
    """Closed-form leaf weight: soft-threshold G by alpha, shrink by H+lambda."""
    if hessian_sum + lam <= 0.0:
        raise ParamError("hessian_sum + lambda must be positive")
    return float(_tree.soft_threshold_weight(gradient_sum, hessian_sum, lam, alpha))


def split_gain(gl: float, hl: float, gr: float, hr: float, lam: float, alpha: float) -> float:
    """Regularized gain of splitting a parent (gl+gr, hl+hr) into two children."""
    return 0.5 * float(
        _tree.gain_score(gl, hl, lam, alpha)
        + _tree.gain_score(gr, hr, lam, alpha)
        - _tree.gain_score(gl + gr, hl + hr, lam, alpha)
    )


def fit_gbt(train: Dataset, params: GbtHyperParams, seed: int = 0) -> BoostedModel:
    """Boost nrounds trees on the training data, starting from the mean."""
    X, y = _check_training_data(train)
    n, p = X.shape
    # any positive fraction keeps at least one row/column; an empty draw
    # is only possible for degenerate inputs
    n_rows = min(n, max(1, round_half_up(params.subsample * n)))
    n_feats = min(p, max(1, round_half_up(params.colsample_bytree * p)))
    if n_rows < 1 or n_feats < 1:
        raise ParamError("subsample/colsample selected an empty set")

    col_order = _tree.argsort_columns(X)
    rng = rng_for(seed, 22)
    base = float(y.mean())
    preds = np.full(n, base, dtype=np.float64)
    in_sample = np.ones(n, dtype=np.uint8)
    feat_mask = np.ones(p, dtype=np.uint8)
    trees: list[RegressionTree] = []
    for _ in range(params.nrounds):
        if n_rows < n:
            in_sample[:] = 0
            in_sample[rng.permutation(n)[:n_rows]] = 1
        if n_feats < p:
            feat_mask[:] = 0
            feat_mask[rng.permutation(p)[:n_feats]] = 1
        g = preds - y
        arrays = _tree.grow_boost_tree(
            X,
            col_order,
            g,
            in_sample,
            feat_mask,
            params.max_depth,
            params.min_child_weight,
            params.lambda_,
            params.alpha,
            params.eta,
        )
        tree = RegressionTree(*arrays)
        tree.add_predictions(X, preds)
        trees.append(tree)
    return BoostedModel(base_score=base, trees=trees, params=params, seed=seed, n_features=p)


def predict_gbt(model: BoostedModel, features: np.ndarray) -> np.ndarray:
    """base_score plus the summed contributions of all boosted trees."""
    return model.predict(features)
