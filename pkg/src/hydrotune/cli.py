"""Command-line surface for the end-to-end workflows.

Every subcommand is pure given its inputs, flags, and seed: output files
are byte-identical across reruns and worker counts. Seeds default to a
recorded constant, never the clock. Wall-clock measurements are the one
physical exception; `--timer fixed` swaps in a deterministic tick clock
when reproducible timing artifacts are needed.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
Environment overrides: HYDROTUNE_OUT_DIR, HYDROTUNE_THREADS.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__, bench, hpo, metalearn, model_io
from ._rand import derive_seed
from .dataset import Dataset, SplitSpec, clean, kfold_partition, load_csv, make_variants, save_csv, train_test_split
from .errors import DataError, HydrotuneError
from .metrics import kge

log = logging.getLogger(__name__)

DEFAULT_SEED = 0
EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3


class _Parser(argparse.ArgumentParser):
    def __init__(self, *args, **kwargs):
        kwargs.setdefault("formatter_class", argparse.ArgumentDefaultsHelpFormatter)
        super().__init__(*args, **kwargs)

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _env_default(name: str, fallback):
    return os.environ.get(name, fallback)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hydrotune", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"hydrotune {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--seed", type=int, default=DEFAULT_SEED, help="root seed (default 0)")
        p.add_argument(
            "--out-dir",
            default=_env_default("HYDROTUNE_OUT_DIR", "hydrotune_out"),
            help="output directory (env HYDROTUNE_OUT_DIR)",
        )
        p.add_argument(
            "--threads",
            type=int,
            default=int(_env_default("HYDROTUNE_THREADS", "1")),
            help="worker count; results do not depend on it (env HYDROTUNE_THREADS)",
        )

    p = sub.add_parser("clean", help="clean a CSV into dense variant datasets")
    common(p)
    p.add_argument("csv", help="input CSV, response in column 1")
    p.add_argument("--response-last", action="store_true", help="response is the last column")
    p.add_argument(
        "--threshold",
        type=float,
        default=None,
        help="single cleaning pass at this column-missingness threshold instead of variants",
    )

    p = sub.add_parser("evaluate", help="cross-validate and test one configuration")
    common(p)
    p.add_argument("csv", help="dense (or auto-cleaned) dataset CSV")
    p.add_argument("--algo", choices=hpo.ALGORITHMS, required=True, help="engine to fit")
    p.add_argument("--strategy", choices=("default", "optdefault"), default="default",
                   help="which published configuration to score")
    p.add_argument("--params-file", default=None, help="JSON hyperparameters overriding --strategy")
    p.add_argument("--metric", choices=hpo.METRICS, default="kge", help="headline skill score")
    p.add_argument("--folds", type=int, default=10, help="cross-validation folds")
    p.add_argument("--test-fraction", type=float, default=0.2, help="held-out test share")

    p = sub.add_parser("search", help="bounded random search over hyperparameters")
    common(p)
    p.add_argument("csv", help="dense (or auto-cleaned) dataset CSV")
    p.add_argument("--algo", choices=hpo.ALGORITHMS, required=True, help="engine to tune")
    p.add_argument("--iters", type=int, default=100, help="random configurations to score")
    p.add_argument("--metric", choices=hpo.METRICS, default="kge", help="ranking score")
    p.add_argument("--folds", type=int, default=10, help="cross-validation folds")
    p.add_argument("--test-fraction", type=float, default=0.2, help="held-out test share")

    p = sub.add_parser("build-metadb", help="run the trial grid and save the meta-database")
    common(p)
    p.add_argument("csvs", nargs="+", help="dataset CSVs (each expanded into cleaned variants)")
    p.add_argument("--iters", type=int, default=100, help="random trials per dataset and algorithm")
    p.add_argument("--test-fraction", type=float, default=0.2, help="held-out test share")

    p = sub.add_parser("train-meta", help="train a meta-model from a meta-database")
    common(p)
    p.add_argument("metadb", help="meta-database NDJSON file")
    p.add_argument("--algo", choices=hpo.ALGORITHMS, required=True, help="engine the model recommends for")
    p.add_argument("--target", choices=hpo.METRICS, default="kge", help="standardized score to predict")
    p.add_argument("--no-metadata", action="store_true", help="train without dataset meta-features")

    p = sub.add_parser("recommend", help="pick hyperparameters for a new dataset")
    common(p)
    p.add_argument("csv", help="new dataset CSV")
    p.add_argument("--meta", required=True, help="meta-model JSON file")
    p.add_argument("--pool", type=int, default=1000, help="random candidates beside the defaults")

    p = sub.add_parser("optimal-defaults", help="derive generic defaults from a metadata-free meta-model")
    common(p)
    p.add_argument("--meta", required=True, help="metadata-free meta-model JSON file")
    p.add_argument("--pool", type=int, default=1000, help="random candidates beside the defaults")
    p.add_argument("--reference-p", type=int, default=10, help="feature count resolving the RF sqrt rule")

    p = sub.add_parser("bench-time", help="wall-clock fit-time sweeps")
    common(p)
    p.add_argument("csv", help="dataset CSV to time fits on")
    p.add_argument("--sweep", choices=("trees", "samples"), default="trees", help="swept quantity")
    p.add_argument("--start", type=int, default=50, help="first sweep value")
    p.add_argument("--stop", type=int, default=None, help="last sweep value (5000 trees, or all rows)")
    p.add_argument("--step", type=int, default=100, help="sweep increment")
    p.add_argument("--reps", type=int, default=10, help="timed fits per sweep point")
    p.add_argument("--trees", type=int, default=500, help="tree count held fixed in the samples sweep")
    p.add_argument("--engines", default="rf,gbt", help="comma-separated subset of rf,gbt")
    p.add_argument("--timer", choices=("wall", "fixed"), default="wall",
                   help="real clock, or a deterministic tick clock for reproducible files")
    p.add_argument(
        "--engine-threads", type=int, default=1,
        help="worker count inside each timed fit (recorded with the timings)",
    )

    p = sub.add_parser("bench-power", help="six-method comparison with leave-one-dataset-out meta-models")
    common(p)
    p.add_argument("csvs", nargs="+", help="dataset CSVs to compare on")
    p.add_argument("--metric", choices=hpo.METRICS, default="kge", help="comparison score")
    p.add_argument("--iters", type=int, default=100, help="random trials per meta-database group")
    p.add_argument("--pool", type=int, default=1000, help="candidate pool for the meta methods")
    p.add_argument("--test-fraction", type=float, default=0.2, help="held-out test share")

    p = sub.add_parser("report", help="re-derive report artifacts from ranks/timings CSVs")
    common(p)
    p.add_argument("--ranks", default=None, help="long-form ranks.csv from bench-power")
    p.add_argument("--timings", default=None, help="timings.csv from bench-time")

    return parser


def _outdir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _json_dump(doc, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_manifest(args, out: Path, inputs: list[str], outputs: list[Path], extra: dict | None = None):
    # out_dir and threads are execution environment, not inputs: outputs
    # must be byte-identical whatever their values, manifest included
    skip = ("command", "func", "out_dir", "threads")
    doc = {
        "command": args.command,
        "package_version": __version__,
        "seed": args.seed,
        "arguments": {k: v for k, v in sorted(vars(args).items()) if k not in skip},
        "input_hashes": {str(p): bench.file_sha256(p) for p in inputs},
        "outputs": sorted(p.name for p in outputs),
    }
    if extra:
        doc.update(extra)
    path = out / f"{args.command.replace('-', '_')}_manifest.json"
    _json_dump(doc, path)
    return path


def _load_dense(path, seed_note="", response_first=True) -> Dataset:
    """Load a CSV and clean it (threshold 0.1) unless it is already dense."""
    raw = load_csv(path, response_first=response_first)
    if raw.is_dense():
        return raw
    log.info("dataset %s has missing cells; cleaning at threshold 0.1%s", raw.name, seed_note)
    return clean(raw, 0.1)


def _cmd_clean(args) -> int:
    out = _outdir(args)
    raw = load_csv(args.csv, response_first=not args.response_last)
    if args.threshold is not None:
        variants = [clean(raw, args.threshold)]
    else:
        variants = make_variants(raw)
    outputs = []
    for v in variants:
        csv_path = out / f"{v.name}.csv"
        man_path = out / f"{v.name}.manifest.json"
        save_csv(v, csv_path, man_path)
        outputs += [csv_path, man_path]
        print(
            f"{v.name}: {v.n} rows x {v.p} features "
            f"(dropped {len(v.cleaning.rows_dropped)} rows, "
            f"{len(v.cleaning.columns_dropped)} columns; imputed {v.cleaning.imputed_cells} cells)"
        )
    _write_manifest(args, out, [args.csv], outputs)
    return EXIT_OK


def _resolve_params(args):
    if args.params_file:
        with open(args.params_file, encoding="utf-8") as fh:
            doc = json.load(fh)
        cls = {"rf": hpo.RfHyperParams, "gbt": hpo.GbtHyperParams}[args.algo]
        return cls.from_dict(doc), "custom"
    if args.strategy == "default":
        return hpo.default_params(args.algo), "default"
    return hpo.optimal_default_params(args.algo), "opt_default"


def _cmd_evaluate(args) -> int:
    out = _outdir(args)
    d = _load_dense(args.csv)
    params, strategy = _resolve_params(args)
    train, test = train_test_split(d, SplitSpec(args.test_fraction, derive_seed(args.seed, 70)))
    folds = kfold_partition(train, k=args.folds, seed=derive_seed(args.seed, 71))
    record = hpo.evaluate_config(
        train, params, args.algo, folds,
        metric=args.metric, seed=derive_seed(args.seed, 72),
        strategy=strategy, n_jobs=args.threads,
    )
    model = hpo.fit_model(train, params, args.algo, seed=derive_seed(args.seed, 73), n_jobs=args.threads)
    record.test_score = kge(test.response, model.predict(test.features))

    report_path = out / "evaluate_report.json"
    _json_dump(record.to_dict(), report_path)
    model_path = out / "model.json"
    model_io.save_model(model, model_path)
    _write_manifest(args, out, [args.csv], [report_path, model_path])
    print(
        f"{args.algo} {strategy}: cv nse={record.cv_mean_nse:.4f} "
        f"cv kge={record.cv_mean_kge:.4f} test {args.metric}="
        f"{record.test_score.nse if args.metric == 'nse' else record.test_score.kge:.4f}"
    )
    return EXIT_OK


def _cmd_search(args) -> int:
    out = _outdir(args)
    d = _load_dense(args.csv)
    train, test = train_test_split(d, SplitSpec(args.test_fraction, derive_seed(args.seed, 70)))
    records = hpo.run_random_search(
        train, args.algo, iterations=args.iters, metric=args.metric,
        seed=derive_seed(args.seed, 74), k=args.folds, n_jobs=args.threads,
    )
    best = records[0]
    model = hpo.fit_model(train, best.params, args.algo, seed=derive_seed(args.seed, 73), n_jobs=args.threads)
    best.test_score = kge(test.response, model.predict(test.features))

    log_path = out / "trials.ndjson"
    hpo.write_trial_log(records, log_path)
    csv_path = out / "trials.csv"
    hpo.write_trial_csv(records, csv_path)
    best_path = out / "best_config.json"
    _json_dump(best.to_dict(), best_path)
    _write_manifest(args, out, [args.csv], [log_path, csv_path, best_path])
    print(
        f"{len(records)} surviving trials; best cv {args.metric}="
        f"{best.cv_mean(args.metric):.4f}, test {args.metric}="
        f"{best.test_score.nse if args.metric == 'nse' else best.test_score.kge:.4f}"
    )
    return EXIT_OK


def _load_variant_datasets(paths) -> list[Dataset]:
    datasets = []
    for path in paths:
        datasets.extend(make_variants(load_csv(path)))
    return datasets


def _cmd_build_metadb(args) -> int:
    out = _outdir(args)
    datasets = _load_variant_datasets(args.csvs)
    records = metalearn.build_meta_database(
        datasets, iterations=args.iters, seed=derive_seed(args.seed, 75),
        test_fraction=args.test_fraction, n_jobs=args.threads,
    )
    ndjson_path = out / "metadb.ndjson"
    metalearn.write_meta_database(records, ndjson_path)
    csv_path = out / "metadb.csv"
    metalearn.write_meta_database_csv(records, csv_path)
    _write_manifest(
        args, out, list(args.csvs), [ndjson_path, csv_path],
        extra={"datasets": [d.name for d in datasets], "records": len(records)},
    )
    print(f"{len(records)} meta-records from {len(datasets)} dataset variants")
    return EXIT_OK


def _cmd_train_meta(args) -> int:
    out = _outdir(args)
    db = metalearn.read_meta_database(args.metadb)
    model = metalearn.train_meta_model(
        db, target=args.target, algorithm=args.algo,
        uses_metadata=not args.no_metadata,
        seed=derive_seed(args.seed, 76), n_jobs=args.threads,
    )
    model_path = out / "meta_model.json"
    model_io.save_meta_model(model, model_path)
    _write_manifest(args, out, [args.metadb], [model_path], extra={"manifest": model.manifest})
    print(
        f"meta-model {args.algo}/{args.target} "
        f"({'with' if model.uses_metadata else 'without'} metadata) "
        f"on {model.manifest['records']} records"
    )
    return EXIT_OK


def _cmd_recommend(args) -> int:
    out = _outdir(args)
    model = model_io.load_meta_model(args.meta)
    d = _load_dense(args.csv)
    params, predicted = metalearn.recommend(
        model, d, pool_size=args.pool, seed=derive_seed(args.seed, 77)
    )
    doc = {
        "algorithm": model.algorithm,
        "target": model.target,
        "params": params.to_dict(),
        "predicted_standardized_score": predicted,
    }
    rec_path = out / "recommendation.json"
    _json_dump(doc, rec_path)
    _write_manifest(args, out, [args.csv, args.meta], [rec_path])
    print(f"recommended {model.algorithm} params (predicted z-{model.target}={predicted:.3f})")
    return EXIT_OK


def _cmd_optimal_defaults(args) -> int:
    out = _outdir(args)
    model = model_io.load_meta_model(args.meta)
    params, predicted = metalearn.compute_new_optimal_defaults(
        model, pool_size=args.pool, seed=derive_seed(args.seed, 78), reference_p=args.reference_p
    )
    doc = {
        "algorithm": model.algorithm,
        "target": model.target,
        "params": params.to_dict(),
        "predicted_standardized_score": predicted,
    }
    path = out / "new_defaults.json"
    _json_dump(doc, path)
    _write_manifest(args, out, [args.meta], [path])
    print(f"new {model.algorithm} defaults for {model.target} (predicted z={predicted:.3f})")
    return EXIT_OK


def _cmd_bench_time(args) -> int:
    out = _outdir(args)
    d = _load_dense(args.csv)
    engines = tuple(e.strip() for e in args.engines.split(",") if e.strip())
    for e in engines:
        if e not in bench.ENGINES:
            raise DataError(f"unknown engine {e!r}")
    timer = bench.make_timer(args.timer)
    if args.sweep == "trees":
        stop = 5000 if args.stop is None else args.stop
        records = bench.time_vs_trees(
            d, start=args.start, stop=stop, step=args.step, reps=args.reps,
            engines=engines, seed=derive_seed(args.seed, 79), timer=timer,
            engine_jobs=args.engine_threads,
        )
    else:
        records = bench.time_vs_samples(
            d, start=args.start, stop=args.stop, step=args.step, trees=args.trees,
            reps=args.reps, engines=engines, seed=derive_seed(args.seed, 79), timer=timer,
            engine_jobs=args.engine_threads,
        )
    written = bench.export_reports(
        None, records, out,
        context={"timer": args.timer, "seed": args.seed, "engine_threads": args.engine_threads},
    )
    _write_manifest(args, out, [args.csv], written)
    print(f"{len(records)} sweep points x {args.reps} reps ({args.timer} timer)")
    return EXIT_OK


def _cmd_bench_power(args) -> int:
    out = _outdir(args)
    datasets = [_load_dense(path) for path in args.csvs]
    names = [d.name for d in datasets]
    if len(set(names)) != len(names):
        raise DataError("dataset names collide; rename the input files")
    db = metalearn.build_meta_database(
        datasets, iterations=args.iters, seed=derive_seed(args.seed, 75),
        test_fraction=args.test_fraction, n_jobs=args.threads,
    )

    cache: dict[tuple[str, str], metalearn.MetaModel] = {}

    def provider(dataset_id: str, algorithm: str) -> metalearn.MetaModel:
        key = (dataset_id, algorithm)
        if key not in cache:
            rest = [r for r in db if r.dataset_id != dataset_id]
            cache[key] = metalearn.train_meta_model(
                rest, target=args.metric, algorithm=algorithm,
                uses_metadata=True, seed=derive_seed(args.seed, 76), n_jobs=args.threads,
            )
        return cache[key]

    table = bench.compare_methods(
        datasets, provider, metric=args.metric, seed=derive_seed(args.seed, 80),
        pool_size=args.pool, test_fraction=args.test_fraction, n_jobs=args.threads,
    )
    written = bench.export_reports(
        table, [], out,
        context={
            "seed": args.seed,
            "dataset_hashes": {d.name: d.content_hash() for d in datasets},
        },
    )
    _write_manifest(args, out, list(args.csvs), written)
    counts = table.best_worst_counts()
    for m in table.methods:
        print(f"{m}: best on {counts[m][0]}, worst on {counts[m][1]} of {len(table.dataset_ids)}")
    return EXIT_OK


def _cmd_report(args) -> int:
    out = _outdir(args)
    if not args.ranks and not args.timings:
        raise DataError("nothing to report: pass --ranks and/or --timings")
    table = _read_ranks_csv(args.ranks) if args.ranks else None
    timings = _read_timings_csv(args.timings) if args.timings else []
    inputs = [p for p in (args.ranks, args.timings) if p]
    written = bench.export_reports(table, timings, out, context={"seed": args.seed})
    _write_manifest(args, out, inputs, written)
    print(f"report artifacts written to {out}")
    return EXIT_OK


def _read_ranks_csv(path) -> bench.RankTable:
    import csv as _csv

    import numpy as np

    rows: dict[str, dict[str, float]] = {}
    order: list[str] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = _csv.DictReader(fh)
        if reader.fieldnames is None or set(reader.fieldnames) < {"dataset", "method", "score"}:
            raise DataError(f"{path}: expected dataset,method,score[,rank] columns")
        for row in reader:
            ds = row["dataset"]
            if ds not in rows:
                rows[ds] = {}
                order.append(ds)
            rows[ds][row["method"]] = float(row["score"])
    for ds, scores in rows.items():
        if set(scores) != set(bench.METHODS):
            raise DataError(f"{path}: dataset {ds} does not cover all six methods")
    scores = np.array([[rows[ds][m] for m in bench.METHODS] for ds in order])
    ranks = np.vstack([bench.rank_scores(r) for r in scores])
    return bench.RankTable(
        methods=bench.METHODS, dataset_ids=order, scores=scores, ranks=ranks, metric="unknown"
    )


def _read_timings_csv(path) -> list[bench.TimingRecord]:
    import csv as _csv

    grouped: dict[tuple, list[tuple[int, float]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = _csv.DictReader(fh)
        expected = {"engine", "sweep", "value", "rep", "seconds"}
        if reader.fieldnames is None or set(reader.fieldnames) != expected:
            raise DataError(f"{path}: expected columns {sorted(expected)}")
        for row in reader:
            key = (row["engine"], row["sweep"], int(row["value"]))
            grouped.setdefault(key, []).append((int(row["rep"]), float(row["seconds"])))
    records = []
    for (engine, sweep, value), reps in sorted(grouped.items()):
        seconds = [s for _, s in sorted(reps)]
        records.append(bench.TimingRecord(engine=engine, sweep=sweep, value=value, seconds=seconds))
    return records


_COMMANDS = {
    "clean": _cmd_clean,
    "evaluate": _cmd_evaluate,
    "search": _cmd_search,
    "build-metadb": _cmd_build_metadb,
    "train-meta": _cmd_train_meta,
    "recommend": _cmd_recommend,
    "optimal-defaults": _cmd_optimal_defaults,
    "bench-time": _cmd_bench_time,
    "bench-power": _cmd_bench_power,
    "report": _cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except HydrotuneError as exc:
        print(f"hydrotune {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # pragma: no cover - defensive
        print(f"hydrotune {args.command}: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
