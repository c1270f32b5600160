"""Meta-learning over past tuning trials.

A meta-database row pairs a hyperparameter configuration with the dataset's
meta-features and the standardized test scores that configuration earned.
A forest regressor trained on those rows ("meta-model") then ranks
candidate configurations for a new dataset; trained without the
meta-features it instead yields defaults expected to work on a generic
dataset.

Scores are standardized within each (dataset, algorithm) group so that
easy and hard problems contribute comparably. Hyperparameters enter the
meta-model on their sampling scale: log2 for eta, min_child_weight, alpha
and lambda (floored at the 2^-10 search bound so an exact zero stays
finite), the stored exponent for the node-size knob, linear otherwise.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import stats

from ._rand import derive_seed, rng_for
from .dataset import Dataset, SplitSpec, train_test_split
from .errors import DataError, HydrotuneError, MetricError, ParamError
from .gbt_engine import GbtHyperParams
from .hpo import (
    default_params,
    fit_model,
    optimal_default_params,
    sample_random,
    search_space,
)
from .metrics import ScoreReport, kge, nse, standardize_scores
from .rf_engine import Forest, RfHyperParams, fit_forest

log = logging.getLogger(__name__)

LOG2_FLOOR = -10.0

META_FEATURE_COLUMNS = (
    "n_obs",
    "n_features",
    "dim_ratio",
    "resp_mean",
    "resp_sd",
    "resp_cv",
    "resp_skewness",
    "resp_kurtosis",
    "mean_abs_resp_corr",
    "max_abs_resp_corr",
    "mean_abs_feat_corr",
    "imputed_fraction",
)

RF_PARAM_COLUMNS = (
    "mtry_fraction",
    "num_trees",
    "replace",
    "min_node_size_exponent",
    "sample_fraction",
)

GBT_PARAM_COLUMNS = (
    "nrounds",
    "log2_eta",
    "subsample",
    "max_depth",
    "log2_min_child_weight",
    "colsample_bytree",
    "log2_alpha",
    "log2_lambda",
)


@dataclass(frozen=True)
class MetaFeatures:
    """Size, shape, moment, and correlation summary of a training dataset."""

    n_obs: float
    n_features: float
    dim_ratio: float
    resp_mean: float
    resp_sd: float
    resp_cv: float
    resp_skewness: float
    resp_kurtosis: float
    mean_abs_resp_corr: float
    max_abs_resp_corr: float
    mean_abs_feat_corr: float
    imputed_fraction: float

    def vector(self) -> list[float]:
        return [getattr(self, c) for c in META_FEATURE_COLUMNS]

    def to_dict(self) -> dict:
        return {c: getattr(self, c) for c in META_FEATURE_COLUMNS}

    @classmethod
    def from_dict(cls, d: dict) -> "MetaFeatures":
        return cls(**{c: float(d[c]) for c in META_FEATURE_COLUMNS})


def _abs_corr_matrix(M: np.ndarray) -> np.ndarray:
    """|Pearson correlation| between columns; zero-variance columns give 0."""
    sd = M.std(axis=0, ddof=1)
    centered = M - M.mean(axis=0)
    denom = np.outer(sd, sd) * (M.shape[0] - 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.abs(centered.T @ centered / denom)
    corr[~np.isfinite(corr)] = 0.0
    return np.minimum(corr, 1.0)  # rounding can push perfect correlation past 1


def extract_meta_features(d_train: Dataset) -> MetaFeatures:
    """Deterministic meta-features of a cleaned training dataset."""
    if not d_train.is_dense():
        raise DataError(f"dataset {d_train.name!r} has missing cells; clean it first")
    if d_train.n < 3:
        raise DataError("need at least 3 rows for meta-feature moments")

    y = d_train.response
    X = d_train.features
    mean = float(y.mean())
    sd = float(y.std(ddof=1))
    cv = sd / abs(mean) if mean != 0.0 else 0.0

    corr = _abs_corr_matrix(np.column_stack([y, X]))
    resp_corr = corr[0, 1:]
    if d_train.p > 1:
        iu = np.triu_indices(d_train.p, k=1)
        feat_corr = float(corr[1:, 1:][iu].mean())
    else:
        feat_corr = 0.0

    with np.errstate(invalid="ignore", divide="ignore"), warnings.catch_warnings():
        # degenerate moments are caught by the finiteness check below
        warnings.simplefilter("ignore", RuntimeWarning)
        features = MetaFeatures(
            n_obs=float(d_train.n),
            n_features=float(d_train.p),
            dim_ratio=float(d_train.p) / float(d_train.n),
            resp_mean=mean,
            resp_sd=sd,
            resp_cv=cv,
            resp_skewness=float(stats.skew(y)),
            resp_kurtosis=float(stats.kurtosis(y)),
            mean_abs_resp_corr=float(resp_corr.mean()),
            max_abs_resp_corr=float(resp_corr.max()),
            mean_abs_feat_corr=feat_corr,
            imputed_fraction=float(d_train.imputed_fraction),
        )
    if not all(np.isfinite(v) for v in features.vector()):
        # a constant response has no defined moments
        raise DataError(f"dataset {d_train.name!r} yields non-finite meta-features")
    return features


@dataclass
class MetaRecord:
    """One tuning trial as seen by the meta-learner."""

    dataset_id: str
    algorithm: str
    strategy: str
    params: RfHyperParams | GbtHyperParams
    meta: MetaFeatures
    nse_raw: float
    kge_raw: float
    nse_std: float = math.nan
    kge_std: float = math.nan

    def to_dict(self) -> dict:
        return {
            "dataset_id": self.dataset_id,
            "algorithm": self.algorithm,
            "strategy": self.strategy,
            "params": self.params.to_dict(),
            "meta": self.meta.to_dict(),
            "nse_raw": self.nse_raw,
            "kge_raw": self.kge_raw,
            "nse_std": self.nse_std,
            "kge_std": self.kge_std,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetaRecord":
        cls_params = RfHyperParams if d["algorithm"] == "rf" else GbtHyperParams
        return cls(
            dataset_id=d["dataset_id"],
            algorithm=d["algorithm"],
            strategy=d["strategy"],
            params=cls_params.from_dict(d["params"]),
            meta=MetaFeatures.from_dict(d["meta"]),
            nse_raw=d["nse_raw"],
            kge_raw=d["kge_raw"],
            nse_std=d["nse_std"],
            kge_std=d["kge_std"],
        )


def hyperparam_columns(algorithm: str) -> tuple[str, ...]:
    if algorithm == "rf":
        return RF_PARAM_COLUMNS
    if algorithm == "gbt":
        return GBT_PARAM_COLUMNS
    raise ParamError(f"unknown algorithm {algorithm!r}")


def _log2_floored(v: float) -> float:
    return math.log2(v) if v > 2.0**LOG2_FLOOR else LOG2_FLOOR


def flatten_params(params: RfHyperParams | GbtHyperParams, p: int) -> list[float]:
    """Hyperparameters on the meta-model's input scale.

    p resolves the RF sqrt(p) mtry rule to a concrete fraction.
    """
    if isinstance(params, RfHyperParams):
        frac = math.sqrt(p) / p if params.mtry_fraction is None else params.mtry_fraction
        return [
            float(frac),
            float(params.num_trees),
            1.0 if params.replace else 0.0,
            float(params.min_node_size_exponent),
            float(params.sample_fraction),
        ]
    return [
        float(params.nrounds),
        math.log2(params.eta),
        float(params.subsample),
        float(params.max_depth),
        _log2_floored(params.min_child_weight),
        float(params.colsample_bytree),
        _log2_floored(params.alpha),
        _log2_floored(params.lambda_),
    ]


def _score_trial(observed: np.ndarray, predicted: np.ndarray) -> ScoreReport:
    """KGE report for a trial, defined even for degenerate predictors.

    Randomly sampled configurations can legitimately produce constant or
    zero-mean predictions whose correlation or CV components are
    undefined. Every trial of the §-style 102-trial grid must still yield
    a record, so undefined components are scored at 0 (their worst-side
    limit), which keeps the KGE finite and appropriately poor.
    """
    try:
        return kge(observed, predicted)
    except MetricError:
        value = nse(observed, predicted)  # raises if the observations are degenerate
        mean_obs = float(np.mean(observed))
        mean_pred = float(np.mean(predicted))
        sd_obs = float(np.std(observed, ddof=1))
        sd_pred = float(np.std(predicted, ddof=1))
        alpha = mean_pred / mean_obs if mean_obs != 0.0 else 0.0
        r = 0.0
        if sd_obs > 0.0 and sd_pred > 0.0:
            r = float(
                np.sum((observed - mean_obs) * (predicted - mean_pred))
                / ((observed.size - 1) * sd_obs * sd_pred)
            )
        beta = 0.0
        if mean_pred != 0.0 and mean_obs != 0.0 and sd_obs > 0.0:
            beta = (sd_pred / mean_pred) / (sd_obs / mean_obs)
        kge_value = 1.0 - math.sqrt((r - 1.0) ** 2 + (alpha - 1.0) ** 2 + (beta - 1.0) ** 2)
        return ScoreReport(nse=value, kge=kge_value, r=r, alpha=alpha, beta=beta)


def _trial_configs(algorithm: str, iterations: int, n_rows: int, seed: int, key: tuple):
    space = search_space(algorithm)
    configs = [("default", default_params(algorithm)), ("opt_default", optimal_default_params(algorithm))]
    for t in range(iterations):
        configs.append(("random", sample_random(space, n_rows, rng_for(seed, 51, *key, t))))
    return configs


def build_meta_database(
    datasets: list[Dataset],
    algorithms: tuple[str, ...] = ("rf", "gbt"),
    iterations: int = 100,
    seed: int = 0,
    test_fraction: float = 0.2,
    n_jobs: int = 1,
) -> list[MetaRecord]:
    """Run default + optimal default + `iterations` random trials per
    (dataset, algorithm), score each fit on the held-out test split, and
    standardize scores within every group.

    Groups where fewer than two trials survive are skipped with a warning.
    """
    if len(datasets) < 2:
        raise DataError("need at least 2 datasets to build a meta-database")

    jobs = []
    contexts = []
    for di, d in enumerate(datasets):
        try:
            train, test = train_test_split(d, SplitSpec(test_fraction, derive_seed(seed, 50, di)))
            meta = extract_meta_features(train)
        except HydrotuneError as exc:
            log.warning("skipping dataset %s: %s", d.name, exc)
            continue
        for ai, algorithm in enumerate(algorithms):
            configs = _trial_configs(algorithm, iterations, train.n, seed, (di, ai))
            contexts.append((d.name, algorithm, meta, configs))
            for t, (strategy, params) in enumerate(configs):
                jobs.append((len(contexts) - 1, t, train, test, algorithm, params,
                             derive_seed(seed, 52, di, ai, t)))

    def run(job):
        ci, t, train, test, algorithm, params, fit_seed = job
        try:
            model = fit_model(train, params, algorithm, seed=fit_seed)
            report = _score_trial(test.response, model.predict(test.features))
            return ci, t, report
        except HydrotuneError as exc:
            log.warning("meta-db trial failed (%s #%d): %s", contexts[ci][1], t, exc)
            return ci, t, None

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            outcomes = list(pool.map(run, jobs))
    else:
        outcomes = [run(job) for job in jobs]

    by_group: dict[int, list[tuple[int, ScoreReport]]] = {}
    for ci, t, report in outcomes:
        if report is not None:
            by_group.setdefault(ci, []).append((t, report))

    records: list[MetaRecord] = []
    for ci, (dataset_id, algorithm, meta, configs) in enumerate(contexts):
        survived = sorted(by_group.get(ci, []))
        if len(survived) < 2:
            log.warning(
                "skipping meta-db group (%s, %s): %d surviving trials",
                dataset_id, algorithm, len(survived),
            )
            continue
        nse_std = standardize_scores([r.nse for _, r in survived])
        kge_std = standardize_scores([r.kge for _, r in survived])
        for j, (t, report) in enumerate(survived):
            strategy, params = configs[t]
            records.append(
                MetaRecord(
                    dataset_id=dataset_id,
                    algorithm=algorithm,
                    strategy=strategy,
                    params=params,
                    meta=meta,
                    nse_raw=report.nse,
                    kge_raw=report.kge,
                    nse_std=float(nse_std[j]),
                    kge_std=float(kge_std[j]),
                )
            )
    if not records:
        raise DataError("every meta-database group failed")
    return records


@dataclass
class MetaModel:
    """Forest regressor predicting a standardized score from a configuration."""

    target: str
    algorithm: str
    uses_metadata: bool
    forest: Forest
    columns: tuple[str, ...]
    manifest: dict

    def predict_scores(self, matrix: np.ndarray) -> np.ndarray:
        return self.forest.predict(matrix)


def train_meta_model(
    db: list[MetaRecord],
    target: str,
    algorithm: str,
    uses_metadata: bool = True,
    seed: int = 0,
    n_jobs: int = 1,
) -> MetaModel:
    """Fit the meta-learner (a forest with the optimal-default RF settings)."""
    if target not in ("nse", "kge"):
        raise ParamError(f"unknown target {target!r}")
    rows = [r for r in db if r.algorithm == algorithm]
    if not rows:
        raise DataError(f"meta-database holds no {algorithm!r} records")

    columns = hyperparam_columns(algorithm)
    if uses_metadata:
        columns = columns + META_FEATURE_COLUMNS
    matrix = np.empty((len(rows), len(columns)), dtype=np.float64)
    for i, r in enumerate(rows):
        vec = flatten_params(r.params, p=int(r.meta.n_features))
        if uses_metadata:
            vec = vec + r.meta.vector()
        matrix[i] = vec
    y = np.array([r.nse_std if target == "nse" else r.kge_std for r in rows])

    train = Dataset(
        name=f"metadb-{algorithm}-{target}",
        response=y,
        features=matrix,
        response_name=f"{target}_std",
        feature_names=list(columns),
    )
    forest = fit_forest(train, optimal_default_params("rf"), seed=derive_seed(seed, 53), n_jobs=n_jobs)
    manifest = {
        "datasets": sorted({r.dataset_id for r in rows}),
        "records": len(rows),
        "algorithm": algorithm,
        "target": target,
        "uses_metadata": uses_metadata,
        "seed": seed,
    }
    return MetaModel(
        target=target,
        algorithm=algorithm,
        uses_metadata=uses_metadata,
        forest=forest,
        columns=tuple(columns),
        manifest=manifest,
    )


def candidate_pool(algorithm: str, pool_size: int, seed: int) -> list:
    """Both published defaults plus pool_size random draws, defaults first."""
    if pool_size < 1:
        raise ParamError("pool_size must be at least 1")
    space = search_space(algorithm)
    pool = [default_params(algorithm), optimal_default_params(algorithm)]
    rng = rng_for(seed, 54)
    pool.extend(sample_random(space, 0, rng) for _ in range(pool_size))
    return pool


def _score_candidates(model: MetaModel, candidates: list, p: int, meta: MetaFeatures | None):
    if not candidates:
        raise DataError("empty candidate pool")
    expected = RfHyperParams if model.algorithm == "rf" else GbtHyperParams
    if not all(isinstance(c, expected) for c in candidates):
        raise ParamError(f"candidates must all be {expected.__name__} for this meta-model")
    meta_vec = meta.vector() if meta is not None else None
    matrix = np.empty((len(candidates), len(model.columns)), dtype=np.float64)
    for i, params in enumerate(candidates):
        vec = flatten_params(params, p=p)
        if meta_vec is not None:
            vec = vec + meta_vec
        matrix[i] = vec
    scores = model.predict_scores(matrix)
    best = int(np.argmax(scores))
    return candidates[best], float(scores[best])


def recommend(
    model: MetaModel,
    d_new: Dataset,
    candidates: list | None = None,
    pool_size: int = 1000,
    seed: int = 0,
):
    """Pick the candidate configuration predicted to score best on d_new.

    Candidates default to both published defaults plus pool_size random
    draws. Ties resolve to the earliest candidate.
    """
    meta = extract_meta_features(d_new) if model.uses_metadata else None
    if candidates is None:
        candidates = candidate_pool(model.algorithm, pool_size, seed)
    return _score_candidates(model, candidates, p=d_new.p, meta=meta)


def compute_new_optimal_defaults(
    model: MetaModel,
    pool_size: int = 1000,
    seed: int = 0,
    reference_p: int = 10,
):
    """Configuration predicted best for a generic dataset.

    Requires a metadata-free meta-model. reference_p only resolves the RF
    sqrt(p) default inside the candidate pool.
    """
    if model.uses_metadata:
        raise ParamError("new optimal defaults need a metadata-free meta-model")
    pool = candidate_pool(model.algorithm, pool_size, seed)
    return _score_candidates(model, pool, p=reference_p, meta=None)


def write_meta_database(records: list[MetaRecord], path) -> None:
    """Newline-delimited JSON, one record per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), sort_keys=True))
            fh.write("\n")


def read_meta_database(path) -> list[MetaRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(MetaRecord.from_dict(json.loads(line)))
    if not records:
        raise DataError(f"{path}: empty meta-database")
    return records


def write_meta_database_csv(records: list[MetaRecord], path) -> None:
    """Flattened meta-database: one column per hyperparameter and meta-feature."""
    import csv as _csv

    if not records:
        raise DataError("no records to export")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = _csv.writer(fh)
        param_cols = {a: hyperparam_columns(a) for a in ("rf", "gbt")}
        all_param_cols = sorted({c for cols in param_cols.values() for c in cols})
        header = (
            ["dataset_id", "algorithm", "strategy", "nse_raw", "kge_raw", "nse_std", "kge_std"]
            + all_param_cols
            + list(META_FEATURE_COLUMNS)
        )
        writer.writerow(header)
        for r in records:
            flat = dict(zip(param_cols[r.algorithm], flatten_params(r.params, p=int(r.meta.n_features))))
            row = [
                r.dataset_id,
                r.algorithm,
                r.strategy,
                repr(r.nse_raw),
                repr(r.kge_raw),
                repr(r.nse_std),
                repr(r.kge_std),
            ]
            row += [repr(flat[c]) if c in flat else "" for c in all_param_cols]
            row += [repr(v) for v in r.meta.vector()]
            writer.writerow(row)
