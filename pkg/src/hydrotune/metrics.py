"""Hydrological skill scores: NSE and the modified KGE.

NSE is one minus the ratio of squared prediction error to the variance of
the observations; 1 is a perfect model and 0 matches the mean predictor.
The modified KGE decomposes skill into correlation (r), a ratio of means
(alpha), and a ratio of coefficients of variation (beta), and equals one
minus the Euclidean distance of (r, alpha, beta) from (1, 1, 1). Sample
(n-1) standard deviations are used throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import MetricError


@dataclass(frozen=True)
class ScoreReport:
    """NSE and KGE for one prediction vector, with the KGE components."""

    nse: float
    kge: float
    r: float
    alpha: float
    beta: float

    def to_dict(self) -> dict:
        return {
            "nse": self.nse,
            "kge": self.kge,
            "r": self.r,
            "alpha": self.alpha,
            "beta": self.beta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScoreReport":
        return cls(nse=d["nse"], kge=d["kge"], r=d["r"], alpha=d["alpha"], beta=d["beta"])


def _check_pair(observed, predicted) -> tuple[np.ndarray, np.ndarray]:
    obs = np.asarray(observed, dtype=np.float64)
    pred = np.asarray(predicted, dtype=np.float64)
    if obs.ndim != 1 or pred.ndim != 1:
        raise MetricError("score inputs must be 1-D vectors")
    if obs.shape[0] != pred.shape[0]:
        raise MetricError(f"length mismatch: {obs.shape[0]} observed vs {pred.shape[0]} predicted")
    if obs.shape[0] < 2:
        raise MetricError("need at least 2 values to score")
    if not (np.isfinite(obs).all() and np.isfinite(pred).all()):
        raise MetricError("score inputs must be finite")
    return obs, pred


def nse(observed, predicted) -> float:
    """Nash-Sutcliffe efficiency: 1 - sum((y-yhat)^2) / sum((y-ybar)^2)."""
    obs, pred = _check_pair(observed, predicted)
    denom = float(np.sum((obs - obs.mean()) ** 2))
    if denom == 0.0:
        raise MetricError("observed values have zero variance; NSE is undefined")
    num = float(np.sum((obs - pred) ** 2))
    return 1.0 - num / denom


def kge(observed, predicted) -> ScoreReport:
    """Modified Kling-Gupta efficiency, reported with its components and NSE.

    r is the Pearson correlation, alpha the ratio of means, beta the ratio
    of coefficients of variation (predictions over observations).

    Raises MetricError when either vector has zero variance or zero mean.
    """
    obs, pred = _check_pair(observed, predicted)
    mean_obs = float(obs.mean())
    mean_pred = float(pred.mean())
    if mean_obs == 0.0 or mean_pred == 0.0:
        raise MetricError("zero mean makes the coefficient of variation undefined")
    sd_obs = float(obs.std(ddof=1))
    sd_pred = float(pred.std(ddof=1))
    if sd_obs == 0.0 or sd_pred == 0.0:
        raise MetricError("zero variance makes correlation undefined")

    r = float(np.sum((obs - mean_obs) * (pred - mean_pred)) / ((obs.size - 1) * sd_obs * sd_pred))
    alpha = mean_pred / mean_obs
    beta = (sd_pred / mean_pred) / (sd_obs / mean_obs)
    kge_value = 1.0 - math.sqrt((r - 1.0) ** 2 + (alpha - 1.0) ** 2 + (beta - 1.0) ** 2)
    return ScoreReport(nse=nse(obs, pred), kge=kge_value, r=r, alpha=alpha, beta=beta)


def standardize_scores(scores) -> np.ndarray:
    """Center and scale by the sample standard deviation.

    A constant input maps to the zero vector instead of raising, so bulk
    score standardization never aborts on a degenerate group.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or s.shape[0] < 2:
        raise MetricError("need a 1-D vector of at least 2 scores")
    if not np.isfinite(s).all():
        raise MetricError("scores must be finite")
    if s.min() == s.max():
        return np.zeros_like(s)
    dev = s - s.mean()
    dev -= dev.mean()  # second pass keeps the mean at zero under cancellation
    sd = math.sqrt(float(dev @ dev) / (s.size - 1))
    if sd == 0.0:
        return np.zeros_like(s)
    return dev / sd
