"""Hyperparameter strategies: defaults, optimal defaults, and random search.

Random search draws each knob uniformly on its declared scale (linear,
log-base-2, node-size exponent, boolean) and scores configurations with
k-fold cross validation on a fold plan shared across every trial, so
candidates are always compared on identical splits.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ._rand import derive_seed, rng_for
from .dataset import Dataset, FoldPlan, kfold_partition
from .errors import DataError, MetricError, ParamError, TrialRejected
from .gbt_engine import GbtHyperParams, fit_gbt
from .metrics import ScoreReport, kge
from .rf_engine import RfHyperParams, fit_forest

log = logging.getLogger(__name__)

ALGORITHMS = ("rf", "gbt")
METRICS = ("nse", "kge")
MAX_FAILED_FOLDS = 2


@dataclass(frozen=True)
class ParamSpec:
    """One searchable hyperparameter: bounds plus the sampling scale.

    Scales: linear (uniform), linear_open_low (uniform on (low, high]),
    log2 (uniform exponent), int (uniform integer, inclusive), exponent
    (uniform node-size exponent in [0,1]), bool.
    """

    name: str
    scale: str
    low: float = 0.0
    high: float = 1.0

    def draw(self, rng: np.random.Generator) -> float | int | bool:
        if self.scale == "linear" or self.scale == "exponent":
            return float(rng.uniform(self.low, self.high))
        if self.scale == "linear_open_low":
            return float(self.low + (self.high - self.low) * (1.0 - rng.random()))
        if self.scale == "log2":
            return float(2.0 ** rng.uniform(self.low, self.high))
        if self.scale == "int":
            return int(rng.integers(int(self.low), int(self.high) + 1))
        if self.scale == "bool":
            return bool(rng.integers(0, 2))
        raise ParamError(f"unknown scale {self.scale!r}")


@dataclass(frozen=True)
class SearchSpace:
    algorithm: str
    params: tuple[ParamSpec, ...]

    def spec(self, name: str) -> ParamSpec:
        for ps in self.params:
            if ps.name == name:
                return ps
        raise ParamError(f"no hyperparameter {name!r} in the {self.algorithm} space")


RF_SPACE = SearchSpace(
    "rf",
    (
        ParamSpec("mtry_fraction", "linear_open_low", 0.0, 1.0),
        ParamSpec("num_trees", "int", 10, 2000),
        ParamSpec("replace", "bool"),
        ParamSpec("min_node_size_exponent", "exponent", 0.0, 1.0),
        ParamSpec("sample_fraction", "linear", 0.1, 1.0),
    ),
)

GBT_SPACE = SearchSpace(
    "gbt",
    (
        ParamSpec("nrounds", "int", 1, 5000),
        ParamSpec("eta", "log2", -10.0, 0.0),
        ParamSpec("subsample", "linear", 0.1, 1.0),
        ParamSpec("max_depth", "int", 1, 15),
        ParamSpec("min_child_weight", "log2", 0.0, 7.0),
        ParamSpec("colsample_bytree", "linear_open_low", 0.0, 1.0),
        ParamSpec("alpha", "log2", -10.0, 10.0),
        ParamSpec("lambda_", "log2", -10.0, 10.0),
    ),
)


def search_space(algorithm: str) -> SearchSpace:
    if algorithm == "rf":
        return RF_SPACE
    if algorithm == "gbt":
        return GBT_SPACE
    raise ParamError(f"unknown algorithm {algorithm!r}")


def default_params(algorithm: str) -> RfHyperParams | GbtHyperParams:
    """Package defaults. RF mtry follows the sqrt(p) rule, resolved at fit."""
    if algorithm == "rf":
        return RfHyperParams(
            mtry_fraction=None,
            num_trees=500,
            replace=True,
            min_node_size_exponent=0.0,
            sample_fraction=1.0,
        )
    if algorithm == "gbt":
        return GbtHyperParams(
            nrounds=500,
            eta=0.3,
            subsample=1.0,
            max_depth=6,
            min_child_weight=1.0,
            colsample_bytree=1.0,
            alpha=0.0,
            lambda_=1.0,
        )
    raise ParamError(f"unknown algorithm {algorithm!r}")


def optimal_default_params(algorithm: str) -> RfHyperParams | GbtHyperParams:
    """Cross-study optimal defaults (single best configuration over many datasets)."""
    if algorithm == "rf":
        return RfHyperParams(
            mtry_fraction=0.257,
            num_trees=983,
            replace=False,
            min_node_size_exponent=0.0,  # node size 1
            sample_fraction=0.703,
        )
    if algorithm == "gbt":
        return GbtHyperParams(
            nrounds=4168,
            eta=0.018,
            subsample=0.839,
            max_depth=13,
            min_child_weight=2.06,
            colsample_bytree=0.752,
            alpha=1.113,
            lambda_=0.982,
        )
    raise ParamError(f"unknown algorithm {algorithm!r}")


def sample_random(
    space: SearchSpace, n_dataset_rows: int, rng: np.random.Generator | int
) -> RfHyperParams | GbtHyperParams:
    """One uniformly drawn configuration from the search space.

    n_dataset_rows documents the rows the node-size exponent will be
    resolved against; the exponent itself is stored, so the draw is
    row-count independent.
    """
    if isinstance(rng, (int, np.integer)):
        rng = rng_for(int(rng))
    values = {ps.name: ps.draw(rng) for ps in space.params}
    if space.algorithm == "rf":
        return RfHyperParams(**values)
    return GbtHyperParams(**values)


@dataclass
class TrialRecord:
    """One scored configuration: per-fold reports plus their means."""

    algorithm: str
    strategy: str
    params: RfHyperParams | GbtHyperParams
    cv_scores: list[ScoreReport | None]
    cv_mean_nse: float
    cv_mean_kge: float
    seed: int
    wall_time: float = 0.0
    test_score: ScoreReport | None = None

    def cv_mean(self, metric: str) -> float:
        if metric == "nse":
            return self.cv_mean_nse
        if metric == "kge":
            return self.cv_mean_kge
        raise ParamError(f"unknown metric {metric!r}")

    def to_dict(self) -> dict:
        # wall_time is intentionally left out: log files must be
        # byte-reproducible across reruns.
        return {
            "algorithm": self.algorithm,
            "strategy": self.strategy,
            "seed": self.seed,
            "params": self.params.to_dict(),
            "cv_mean_nse": self.cv_mean_nse,
            "cv_mean_kge": self.cv_mean_kge,
            "cv_scores": [s.to_dict() if s is not None else None for s in self.cv_scores],
            "test_score": self.test_score.to_dict() if self.test_score else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrialRecord":
        cls_params = RfHyperParams if d["algorithm"] == "rf" else GbtHyperParams
        return cls(
            algorithm=d["algorithm"],
            strategy=d["strategy"],
            params=cls_params.from_dict(d["params"]),
            cv_scores=[ScoreReport.from_dict(s) if s else None for s in d["cv_scores"]],
            cv_mean_nse=d["cv_mean_nse"],
            cv_mean_kge=d["cv_mean_kge"],
            seed=d["seed"],
            test_score=ScoreReport.from_dict(d["test_score"]) if d.get("test_score") else None,
        )


def fit_model(train: Dataset, params, algorithm: str, seed: int, n_jobs: int = 1):
    if algorithm == "rf":
        return fit_forest(train, params, seed=seed, n_jobs=n_jobs)
    if algorithm == "gbt":
        return fit_gbt(train, params, seed=seed)
    raise ParamError(f"unknown algorithm {algorithm!r}")


def evaluate_config(
    d_train: Dataset,
    params,
    algorithm: str,
    folds: FoldPlan,
    metric: str = "kge",
    seed: int = 0,
    strategy: str = "custom",
    n_jobs: int = 1,
    timer=time.perf_counter,
) -> TrialRecord:
    """Score one configuration by k-fold cross validation on d_train.

    Folds whose fit or scoring fails count as failed; a trial with more
    than MAX_FAILED_FOLDS failures raises TrialRejected.
    """
    if metric not in METRICS:
        raise ParamError(f"unknown metric {metric!r}")
    if folds.assignments.shape[0] != d_train.n:
        raise DataError("fold plan was built for a different dataset")

    t0 = timer()
    scores: list[ScoreReport | None] = []
    for fold in range(folds.k):
        fit_rows = folds.train_rows(fold)
        val_rows = folds.test_rows(fold)
        try:
            # seed by fold content, not label: relabeling folds cannot
            # change any fit
            model = fit_model(
                d_train.take_rows(fit_rows),
                params,
                algorithm,
                seed=derive_seed(seed, 40, *val_rows.tolist()),
                n_jobs=n_jobs,
            )
            pred = model.predict(d_train.features[val_rows])
            scores.append(kge(d_train.response[val_rows], pred))
        except (MetricError, ParamError, DataError) as exc:
            log.debug("fold %d failed: %s", fold, exc)
            scores.append(None)

    n_failed = sum(1 for s in scores if s is None)
    if n_failed > MAX_FAILED_FOLDS:
        raise TrialRejected(f"{n_failed} of {folds.k} folds failed")
    good = [s for s in scores if s is not None]
    record = TrialRecord(
        algorithm=algorithm,
        strategy=strategy,
        params=params,
        cv_scores=scores,
        cv_mean_nse=float(np.mean([s.nse for s in good])),
        cv_mean_kge=float(np.mean([s.kge for s in good])),
        seed=seed,
        wall_time=timer() - t0,
    )
    return record


def run_random_search(
    d_train: Dataset,
    algorithm: str,
    iterations: int = 100,
    metric: str = "kge",
    seed: int = 0,
    k: int = 10,
    n_jobs: int = 1,
    timer=time.perf_counter,
) -> list[TrialRecord]:
    """Evaluate `iterations` random configurations on one shared fold plan.

    Returns surviving trials sorted by their CV mean of `metric`, best
    first; rejected trials are dropped with a warning.
    """
    if iterations < 1:
        raise ParamError("iterations must be at least 1")
    space = search_space(algorithm)
    folds = kfold_partition(d_train, k=k, seed=seed)

    def run_one(i: int) -> TrialRecord | None:
        params = sample_random(space, d_train.n, rng_for(seed, 30, i))
        try:
            return evaluate_config(
                d_train,
                params,
                algorithm,
                folds,
                metric=metric,
                seed=derive_seed(seed, 31, i),
                strategy="random",
                timer=timer,
            )
        except TrialRejected as exc:
            log.warning("trial %d rejected: %s", i, exc)
            return None

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(run_one, range(iterations)))
    else:
        results = [run_one(i) for i in range(iterations)]

    order = [i for i, r in enumerate(results) if r is not None]
    if not order:
        raise DataError("every random-search trial was rejected")
    order.sort(key=lambda i: (-results[i].cv_mean(metric), i))
    return [results[i] for i in order]


def write_trial_log(records: list[TrialRecord], path) -> None:
    """Newline-delimited JSON, one trial per line, reproducible bytes."""
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), sort_keys=True))
            fh.write("\n")


def read_trial_log(path) -> list[TrialRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(TrialRecord.from_dict(json.loads(line)))
    return records


def write_trial_csv(records: list[TrialRecord], path) -> None:
    """Flat one-row-per-trial CSV with one column per hyperparameter."""
    if not records:
        raise DataError("no trials to export")
    algorithms = {r.algorithm for r in records}
    if len(algorithms) > 1:
        raise DataError("cannot flatten a mixed-algorithm trial log")
    param_names = list(records[0].params.to_dict())
    with open(path, "w", newline="", encoding="utf-8") as fh:
        import csv as _csv

        writer = _csv.writer(fh)
        writer.writerow(
            ["algorithm", "strategy", "seed", "cv_mean_nse", "cv_mean_kge"] + param_names
        )
        for r in records:
            pd = r.params.to_dict()
            writer.writerow(
                [r.algorithm, r.strategy, r.seed, repr(r.cv_mean_nse), repr(r.cv_mean_kge)]
                + [_csv_cell(pd[name]) for name in param_names]
            )


def _csv_cell(v) -> str:
    if v is None:
        return "sqrt"
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)
