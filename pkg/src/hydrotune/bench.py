"""Experiment harness: timing sweeps and the six-method comparison.

Timing sweeps fit each engine across a range of tree counts or training
sizes, repeating every point and averaging wall-clock seconds from an
injectable timer (a deterministic tick timer is available so pipelines can
be replayed byte-identically). The comparison harness scores six method
tags per dataset on a held-out test split, ranks them (1 = best, ties get
the mean rank), and exports the rank matrix, the per-method best/worst
tallies, and per-dataset deltas against the default-forest baseline.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats

from ._rand import derive_seed, rng_for
from .dataset import Dataset, SplitSpec, train_test_split
from .errors import DataError, HydrotuneError, ParamError
from .hpo import default_params, fit_model, optimal_default_params
from .metalearn import MetaModel, recommend
from .metrics import kge

log = logging.getLogger(__name__)

METHODS = (
    "rf-default",
    "rf-optdefault",
    "rf-meta",
    "gbt-default",
    "gbt-optdefault",
    "gbt-meta",
)
BASELINE_METHOD = "rf-default"
ENGINES = ("rf", "gbt")


class TickTimer:
    """Deterministic stand-in for perf_counter: each call advances one tick."""

    def __init__(self, step: float = 0.001):
        self.step = step
        self._now = 0.0

    def __call__(self) -> float:
        self._now += self.step
        return self._now


def make_timer(kind: str):
    if kind == "wall":
        return time.perf_counter
    if kind == "fixed":
        return TickTimer()
    raise ParamError(f"unknown timer {kind!r}")


@dataclass
class TimingRecord:
    """Mean and per-repetition fit seconds at one sweep point."""

    engine: str
    sweep: str
    value: int
    seconds: list[float]

    @property
    def mean(self) -> float:
        return float(np.mean(self.seconds))


def sweep_points(start: int, stop: int, step: int) -> list[int]:
    """start, start+step, ... capped at stop (stop itself included when hit)."""
    if start < 1 or step < 1 or stop < start:
        raise ParamError(f"bad sweep range {start}..{stop} step {step}")
    return list(range(start, stop + 1, step))


def _sized_params(engine: str, trees: int):
    from dataclasses import replace

    if engine == "rf":
        return replace(default_params("rf"), num_trees=trees)
    return replace(default_params("gbt"), nrounds=trees)


def _timed_fits(d, engine, trees, reps, seed, timer, n_jobs) -> list[float]:
    seconds = []
    for _ in range(reps):
        t0 = timer()
        fit_model(d, _sized_params(engine, trees), engine, seed=seed, n_jobs=n_jobs)
        seconds.append(timer() - t0)
    return seconds


def time_vs_trees(
    d: Dataset,
    start: int = 50,
    stop: int = 5000,
    step: int = 100,
    reps: int = 10,
    engines: tuple[str, ...] = ENGINES,
    seed: int = 0,
    timer=time.perf_counter,
    engine_jobs: int = 1,
) -> list[TimingRecord]:
    """Fit time as the tree count grows, all rows used, defaults otherwise.

    Engines run single-threaded unless engine_jobs raises it (callers
    should record that choice next to the timings). A failing engine
    aborts its own sweep; its partial records survive and the gap is
    logged.
    """
    records: list[TimingRecord] = []
    for engine in engines:
        for value in sweep_points(start, stop, step):
            try:
                secs = _timed_fits(
                    d, engine, value, reps, derive_seed(seed, 60, value), timer, engine_jobs
                )
            except HydrotuneError as exc:
                log.warning("%s sweep aborted at %d trees: %s", engine, value, exc)
                break
            records.append(TimingRecord(engine=engine, sweep="trees", value=value, seconds=secs))
    return records


def time_vs_samples(
    d: Dataset,
    start: int = 50,
    stop: int | None = None,
    step: int = 100,
    trees: int = 500,
    reps: int = 10,
    engines: tuple[str, ...] = ENGINES,
    seed: int = 0,
    timer=time.perf_counter,
    engine_jobs: int = 1,
) -> list[TimingRecord]:
    """Fit time as the training size grows, tree count held constant.

    Each sweep point draws one seeded row subsample that every repetition
    and engine reuses.
    """
    stop = d.n if stop is None else min(stop, d.n)
    if d.n < start:
        raise DataError(f"dataset has {d.n} rows; sweep starts at {start}")
    points = sweep_points(start, stop, step)
    subsets = {
        v: d.take_rows(np.sort(rng_for(seed, 61, v).permutation(d.n)[:v])) for v in points
    }
    records: list[TimingRecord] = []
    for engine in engines:
        for value in points:
            try:
                secs = _timed_fits(
                    subsets[value], engine, trees, reps,
                    derive_seed(seed, 62, value), timer, engine_jobs,
                )
            except HydrotuneError as exc:
                log.warning("%s sweep aborted at %d samples: %s", engine, value, exc)
                break
            records.append(TimingRecord(engine=engine, sweep="samples", value=value, seconds=secs))
    return records


@dataclass
class RankTable:
    """Scores and 1-is-best ranks of the six methods on every dataset."""

    methods: tuple[str, ...]
    dataset_ids: list[str]
    scores: np.ndarray  # (n_datasets, n_methods)
    ranks: np.ndarray
    metric: str

    def deltas(self) -> np.ndarray:
        """Per-dataset score lift of each method over the default forest."""
        base = self.scores[:, self.methods.index(BASELINE_METHOD)]
        return self.scores - base[:, None]

    def best_worst_counts(self) -> dict[str, tuple[int, int]]:
        """Datasets where each method holds the best / the worst rank."""
        best = self.ranks == self.ranks.min(axis=1, keepdims=True)
        worst = self.ranks == self.ranks.max(axis=1, keepdims=True)
        return {
            m: (int(best[:, j].sum()), int(worst[:, j].sum()))
            for j, m in enumerate(self.methods)
        }


def rank_scores(scores: np.ndarray) -> np.ndarray:
    """Descending ranks, 1 = best; exact ties share the mean of their ranks."""
    return stats.rankdata(-np.asarray(scores, dtype=np.float64), method="average")


def compare_methods(
    datasets: list[Dataset],
    meta_models,
    metric: str = "kge",
    seed: int = 0,
    pool_size: int = 1000,
    test_fraction: float = 0.2,
    n_jobs: int = 1,
) -> RankTable:
    """Fit all six method tags per dataset and rank their test scores.

    meta_models is a callable (dataset_id, algorithm) -> MetaModel trained
    with that dataset left out of its meta-database; the exclusion is
    enforced here. Datasets where any method fails are skipped and logged.
    """
    if metric not in ("nse", "kge"):
        raise ParamError(f"unknown metric {metric!r}")

    def run_one(job):
        di, d = job
        train, test = train_test_split(d, SplitSpec(test_fraction, derive_seed(seed, 63, di)))
        row = []
        for method in METHODS:
            algorithm, strategy = method.split("-", 1)
            if strategy == "default":
                params = default_params(algorithm)
            elif strategy == "optdefault":
                params = optimal_default_params(algorithm)
            else:
                model = meta_models(d.name, algorithm)
                _check_left_out(model, d.name)
                params, _ = recommend(
                    model, train, pool_size=pool_size, seed=derive_seed(seed, 64, di)
                )
            fitted = fit_model(train, params, algorithm, seed=derive_seed(seed, 65, di, len(row)))
            report = kge(test.response, fitted.predict(test.features))
            row.append(report.nse if metric == "nse" else report.kge)
        return row

    jobs = list(enumerate(datasets))
    ids: list[str] = []
    rows: list[list[float]] = []

    def safe(job):
        try:
            return run_one(job)
        except HydrotuneError as exc:
            log.warning("skipping dataset %s: %s", job[1].name, exc)
            return None

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            outcomes = list(pool.map(safe, jobs))
    else:
        outcomes = [safe(job) for job in jobs]
    for (di, d), row in zip(jobs, outcomes):
        if row is not None:
            ids.append(d.name)
            rows.append(row)
    if not rows:
        raise DataError("every dataset failed the method comparison")

    scores = np.asarray(rows, dtype=np.float64)
    ranks = np.vstack([rank_scores(r) for r in scores])
    return RankTable(methods=METHODS, dataset_ids=ids, scores=scores, ranks=ranks, metric=metric)


def _check_left_out(model: MetaModel, dataset_id: str) -> None:
    if dataset_id in model.manifest.get("datasets", []):
        raise DataError(
            f"meta-model for {dataset_id!r} was trained with that dataset in its meta-database"
        )


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def export_reports(
    ranks: RankTable | None,
    timings: list[TimingRecord],
    out_dir,
    context: dict | None = None,
) -> list[Path]:
    """Write the comparison and timing artifacts into out_dir.

    Emits ranks.csv (long form), rank_matrix.csv (methods x datasets),
    deltas.csv, method_counts.csv, timings.csv, and report_manifest.json.
    Identical inputs always produce identical bytes.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise DataError(f"cannot write to {out}: {exc}") from None

    written: list[Path] = []

    def _writer(name):
        path = out / name
        written.append(path)
        return path

    if ranks is not None:
        with open(_writer("ranks.csv"), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["dataset", "method", "score", "rank"])
            for i, ds in enumerate(ranks.dataset_ids):
                for j, m in enumerate(ranks.methods):
                    w.writerow([ds, m, repr(float(ranks.scores[i, j])), repr(float(ranks.ranks[i, j]))])

        with open(_writer("rank_matrix.csv"), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["method"] + ranks.dataset_ids)
            for j, m in enumerate(ranks.methods):
                w.writerow([m] + [repr(float(r)) for r in ranks.ranks[:, j]])

        deltas = ranks.deltas()
        with open(_writer("deltas.csv"), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["dataset", "method", "delta"])
            for i, ds in enumerate(ranks.dataset_ids):
                for j, m in enumerate(ranks.methods):
                    w.writerow([ds, m, repr(float(deltas[i, j]))])

        counts = ranks.best_worst_counts()
        with open(_writer("method_counts.csv"), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["method", "best", "worst"])
            for m in ranks.methods:
                w.writerow([m, counts[m][0], counts[m][1]])

    if timings:
        with open(_writer("timings.csv"), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["engine", "sweep", "value", "rep", "seconds"])
            for rec in timings:
                for rep, sec in enumerate(rec.seconds):
                    w.writerow([rec.engine, rec.sweep, rec.value, rep, repr(float(sec))])

    manifest = {
        "metric": ranks.metric if ranks is not None else None,
        "methods": list(ranks.methods) if ranks is not None else None,
        "datasets": ranks.dataset_ids if ranks is not None else None,
        "timing_points": sorted({(r.engine, r.sweep, r.value) for r in timings}),
        "files": [p.name for p in written],
    }
    if context:
        manifest.update(context)
    with open(_writer("report_manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return written
