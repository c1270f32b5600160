"""Tabular regression datasets: CSV ingestion, cleaning, splits, and folds.

Input layout is a headered CSV with the response variable in the first
column (configurable) and numeric explanatory columns after it. Missing
cells are an empty string, "NA", or "NaN" (case-insensitive). Cleaning
removes rows with a missing response, drops feature columns whose
missingness exceeds a threshold, and median-imputes whatever is left so
the tree engines always see dense matrices.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DataError
from ._rand import rng_for, round_half_up

MISSING_MARKERS = {"", "na", "nan"}


def _parse_cell(text: str, row: int, col: str) -> float:
    token = text.strip()
    if token.lower() in MISSING_MARKERS:
        return math.nan
    try:
        return float(token)
    except ValueError:
        raise DataError(
            f"non-numeric cell {text!r} at row {row}, column {col!r} "
            "(missing cells must be empty, 'NA', or 'NaN')"
        ) from None


@dataclass
class CleaningInfo:
    """What clean() did to a dataset; serialized as the sidecar manifest."""

    column_threshold: float
    rows_dropped: list[int]
    columns_dropped: list[str]
    imputed_per_column: dict[str, int]

    @property
    def imputed_cells(self) -> int:
        return sum(self.imputed_per_column.values())

    def to_dict(self) -> dict:
        return {
            "column_threshold": self.column_threshold,
            "rows_dropped": list(self.rows_dropped),
            "columns_dropped": list(self.columns_dropped),
            "imputed_per_column": dict(self.imputed_per_column),
            "imputed_cells": self.imputed_cells,
        }


@dataclass
class Dataset:
    """One regression problem: response vector y plus an n-by-p feature matrix.

    Instances are treated as immutable; every operation returns a new
    Dataset. Missing cells are NaN until clean() runs.
    """

    name: str
    response: np.ndarray
    features: np.ndarray
    response_name: str
    feature_names: list[str]
    cleaning: CleaningInfo | None = field(default=None, repr=False)

    def __post_init__(self):
        self.response = np.asarray(self.response, dtype=np.float64)
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.response.ndim != 1:
            raise DataError("features must be 2-D and response 1-D")
        if self.features.shape[0] != self.response.shape[0]:
            raise DataError("response and features disagree on row count")
        if self.n < 2:
            raise DataError(f"dataset {self.name!r} has {self.n} rows; need at least 2")
        if self.p < 1:
            raise DataError(f"dataset {self.name!r} has no feature columns")
        if len(self.feature_names) != self.p:
            raise DataError("feature_names length does not match feature count")

    @property
    def n(self) -> int:
        return int(self.response.shape[0])

    @property
    def p(self) -> int:
        return int(self.features.shape[1])

    def missing_response_rows(self) -> np.ndarray:
        return np.flatnonzero(np.isnan(self.response))

    def column_missing_fraction(self) -> np.ndarray:
        """Per-feature fraction of missing cells, in column order."""
        return np.isnan(self.features).mean(axis=0)

    @property
    def imputed_fraction(self) -> float:
        """Fraction of feature cells that were imputed, 0.0 for raw data."""
        if self.cleaning is None:
            return 0.0
        return self.cleaning.imputed_cells / float(self.n * self.p)

    def is_dense(self) -> bool:
        return not (np.isnan(self.response).any() or np.isnan(self.features).any())

    def take_rows(self, idx: np.ndarray, name: str | None = None) -> "Dataset":
        """Row subset in the given index order."""
        return replace(
            self,
            name=self.name if name is None else name,
            response=self.response[idx].copy(),
            features=self.features[idx].copy(),
        )

    def content_hash(self) -> str:
        """Stable hash of names and cell values, for run manifests."""
        import hashlib

        h = hashlib.sha256()
        h.update(self.name.encode())
        h.update(("\x1f".join([self.response_name] + self.feature_names)).encode())
        h.update(self.response.tobytes())
        h.update(np.ascontiguousarray(self.features).tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class SplitSpec:
    """Holdout split: test_fraction of rows set aside, seeded and repeatable."""

    test_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise DataError(f"test_fraction must be in (0,1), got {self.test_fraction}")


@dataclass(frozen=True)
class FoldPlan:
    """Assignment of each training row to one of k near-equal folds."""

    k: int
    assignments: np.ndarray
    seed: int

    def fold_sizes(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.k)

    def train_rows(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != fold)

    def test_rows(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)


def load_csv(path, response_first: bool = True, name: str | None = None) -> Dataset:
    """Parse a headered CSV into a raw (possibly missing-valued) Dataset.

    The response is the first column when response_first, the last column
    otherwise. Cells must be numeric or a missing marker.
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise DataError(f"{path}: empty file") from None
            rows = list(reader)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None

    header = [h.strip() for h in header]
    if len(header) < 2:
        raise DataError(f"{path}: need a response column and at least one feature")
    rows = [r for r in rows if r]  # tolerate trailing blank lines
    resp_col = 0 if response_first else len(header) - 1

    values = np.empty((len(rows), len(header)), dtype=np.float64)
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise DataError(f"{path}: row {i + 1} has {len(row)} cells, expected {len(header)}")
        for j, cell in enumerate(row):
            values[i, j] = _parse_cell(cell, i + 1, header[j])

    feat_cols = [j for j in range(len(header)) if j != resp_col]
    if name is None:
        import os

        name = os.path.splitext(os.path.basename(str(path)))[0]
    return Dataset(
        name=name,
        response=values[:, resp_col],
        features=values[:, feat_cols],
        response_name=header[resp_col],
        feature_names=[header[j] for j in feat_cols],
    )


def clean(raw: Dataset, column_threshold: float = 0.1) -> Dataset:
    """Drop missing-response rows, then over-missing columns, then impute.

    Rows with a missing response go first. Column missingness is measured
    on the surviving rows; columns above column_threshold are dropped.
    Remaining missing feature cells are filled with the column median.
    """
    if not 0.0 < column_threshold <= 1.0:
        raise DataError(f"column_threshold must be in (0,1], got {column_threshold}")

    bad_rows = raw.missing_response_rows()
    keep_rows = np.setdiff1d(np.arange(raw.n), bad_rows)
    if keep_rows.size < 2:
        raise DataError(f"cleaning {raw.name!r} leaves {keep_rows.size} rows")

    feats = raw.features[keep_rows]
    col_missing = np.isnan(feats).mean(axis=0)
    keep_cols = np.flatnonzero(col_missing <= column_threshold)
    if keep_cols.size == 0:
        raise DataError(
            f"cleaning {raw.name!r} drops every feature column at threshold {column_threshold}"
        )
    feats = feats[:, keep_cols].copy()

    imputed: dict[str, int] = {}
    kept_names = [raw.feature_names[j] for j in keep_cols]
    for j, colname in enumerate(kept_names):
        mask = np.isnan(feats[:, j])
        if mask.any():
            median = float(np.median(feats[~mask, j]))
            feats[mask, j] = median
            imputed[colname] = int(mask.sum())

    info = CleaningInfo(
        column_threshold=column_threshold,
        rows_dropped=[int(i) for i in bad_rows],
        columns_dropped=[raw.feature_names[j] for j in range(raw.p) if j not in set(keep_cols)],
        imputed_per_column=imputed,
    )
    return Dataset(
        name=raw.name,
        response=raw.response[keep_rows].copy(),
        features=feats,
        response_name=raw.response_name,
        feature_names=kept_names,
        cleaning=info,
    )


def make_variants(raw: Dataset) -> list[Dataset]:
    """Cleaned variants of a raw dataset.

    When some feature column is more than 10% missing (after removing
    missing-response rows), two variants are produced, keeping columns up
    to 50% and up to 10% missing respectively. Otherwise the two would
    coincide, so a single 10%-threshold variant is returned.
    """
    keep_rows = np.setdiff1d(np.arange(raw.n), raw.missing_response_rows())
    col_missing = np.isnan(raw.features[keep_rows]).mean(axis=0)
    if (col_missing > 0.1).any():
        loose = clean(raw, 0.5)
        tight = clean(raw, 0.1)
        loose.name = f"{raw.name}__t50"
        tight.name = f"{raw.name}__t10"
        return [loose, tight]
    return [clean(raw, 0.1)]


def train_test_split(d: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    """Disjoint train/test row partition; row order is preserved per side."""
    n_test = round_half_up(d.n * spec.test_fraction)
    if n_test < 1 or d.n - n_test < 1:
        raise DataError(
            f"test_fraction {spec.test_fraction} on {d.n} rows leaves an empty side"
        )
    perm = rng_for(spec.seed, 10).permutation(d.n)
    test_idx = np.sort(perm[:n_test])
    train_idx = np.sort(perm[n_test:])
    return d.take_rows(train_idx), d.take_rows(test_idx)


def kfold_partition(d: Dataset, k: int = 10, seed: int = 0) -> FoldPlan:
    """Assign rows to k folds whose sizes differ by at most one."""
    if k < 2:
        raise DataError(f"k must be at least 2, got {k}")
    if k > d.n:
        raise DataError(f"k={k} exceeds the {d.n} available rows")
    perm = rng_for(seed, 11).permutation(d.n)
    assignments = np.empty(d.n, dtype=np.int64)
    base, extra = divmod(d.n, k)
    start = 0
    for fold in range(k):
        size = base + (1 if fold < extra else 0)
        assignments[perm[start : start + size]] = fold
        start += size
    return FoldPlan(k=k, assignments=assignments, seed=seed)


def save_csv(d: Dataset, path, manifest_path=None) -> None:
    """Write a dataset back out in the input layout, plus an optional manifest."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([d.response_name] + d.feature_names)
        for i in range(d.n):
            row = [_fmt(d.response[i])] + [_fmt(v) for v in d.features[i]]
            writer.writerow(row)
    if manifest_path is not None:
        manifest = {
            "name": d.name,
            "rows": d.n,
            "columns": d.p,
            "cleaning": d.cleaning.to_dict() if d.cleaning else None,
        }
        with open(manifest_path, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _fmt(v: float) -> str:
    return "" if math.isnan(v) else repr(float(v))
