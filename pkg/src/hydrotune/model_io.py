"""Versioned JSON model files for forests, boosted models, and meta-models."""

from __future__ import annotations

import json

from .dataset import Dataset  # noqa: F401  (re-exported type for callers)
from .errors import DataError
from .gbt_engine import BoostedModel, GbtHyperParams
from .metalearn import MetaModel
from .rf_engine import Forest, RegressionTree, RfHyperParams

MODEL_FORMAT = "hydrotune-model"
META_FORMAT = "hydrotune-meta-model"
VERSION = 1


def model_to_dict(model: Forest | BoostedModel) -> dict:
    doc = {
        "format": MODEL_FORMAT,
        "version": VERSION,
        "algorithm": "rf" if isinstance(model, Forest) else "gbt",
        "seed": int(model.seed),
        "n_features": int(model.n_features),
        "params": model.params.to_dict(),
        "trees": [t.to_dict() for t in model.trees],
    }
    if isinstance(model, Forest):
        doc["oob_available"] = bool(model.oob_available)
    else:
        doc["base_score"] = float(model.base_score)
    return doc


def model_from_dict(doc: dict) -> Forest | BoostedModel:
    if doc.get("format") != MODEL_FORMAT:
        raise DataError("not a model file")
    if doc.get("version") != VERSION:
        raise DataError(f"unsupported model version {doc.get('version')}")
    trees = [RegressionTree.from_dict(t) for t in doc["trees"]]
    if doc["algorithm"] == "rf":
        return Forest(
            trees=trees,
            params=RfHyperParams.from_dict(doc["params"]),
            seed=doc["seed"],
            oob_available=doc["oob_available"],
            n_features=doc["n_features"],
        )
    if doc["algorithm"] == "gbt":
        return BoostedModel(
            base_score=doc["base_score"],
            trees=trees,
            params=GbtHyperParams.from_dict(doc["params"]),
            seed=doc["seed"],
            n_features=doc["n_features"],
        )
    raise DataError(f"unknown algorithm {doc['algorithm']!r} in model file")


def save_model(model: Forest | BoostedModel, path) -> None:
    _dump(model_to_dict(model), path)


def load_model(path) -> Forest | BoostedModel:
    return model_from_dict(_load(path))


def save_meta_model(model: MetaModel, path) -> None:
    doc = {
        "format": META_FORMAT,
        "version": VERSION,
        "target": model.target,
        "algorithm": model.algorithm,
        "uses_metadata": model.uses_metadata,
        "columns": list(model.columns),
        "manifest": model.manifest,
        "forest": model_to_dict(model.forest),
    }
    _dump(doc, path)


def load_meta_model(path) -> MetaModel:
    doc = _load(path)
    if doc.get("format") != META_FORMAT:
        raise DataError("not a meta-model file")
    if doc.get("version") != VERSION:
        raise DataError(f"unsupported meta-model version {doc.get('version')}")
    forest = model_from_dict(doc["forest"])
    if not isinstance(forest, Forest):
        raise DataError("meta-model must embed a forest")
    return MetaModel(
        target=doc["target"],
        algorithm=doc["algorithm"],
        uses_metadata=doc["uses_metadata"],
        forest=forest,
        columns=tuple(doc["columns"]),
        manifest=doc["manifest"],
    )


def _dump(doc: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def _load(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path} is not valid JSON: {exc}") from None
