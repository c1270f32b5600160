"""Acceptance suite: one test per exit criterion, at the stated tolerances.

Each test carries an `acceptance` marker; conftest prints a PASS/FAIL line
per criterion in the terminal summary.
"""

import json
import math

import numpy as np
import pytest
from scipy import stats
from scipy.optimize import minimize_scalar

from hydrotune import bench, hpo, metalearn
from hydrotune.cli import main as cli_main
from hydrotune.dataset import Dataset, SplitSpec, clean, kfold_partition, train_test_split
from hydrotune.gbt_engine import GbtHyperParams, fit_gbt, leaf_weight
from hydrotune.metrics import kge, nse
from hydrotune.rf_engine import RfHyperParams, best_split, fit_forest

from conftest import friedman1
from test_metalearn import planted_rf_db, tiny_dataset
from test_rf_engine import assert_split_matches_oracle, brute_force_split


@pytest.mark.acceptance("criterion-01 metric oracles")
def test_c01_metric_oracles():
    # hand-derived fixtures
    assert nse([1, 2, 3, 4], [2, 2, 2, 2]) == pytest.approx(-0.2, abs=1e-10)
    assert kge([1.0, 2.0, 3.0], [2.0, 4.0, 6.0]).kge == pytest.approx(0.0, abs=1e-10)
    assert kge([1.0, 2.0, 3.0], [4.0, 5.0, 6.0]).kge == pytest.approx(
        1.0 - math.sqrt(2.25 + 0.36), abs=1e-10
    )

    # straight-from-the-equations reimplementation on 1000 random vectors
    rng = np.random.default_rng(101)
    for _ in range(1000):
        n = int(rng.integers(10, 200))
        y = rng.normal(5.0, 2.0, n)
        yhat = y * rng.uniform(0.5, 1.5) + rng.normal(0.0, 1.0, n)
        want_nse = 1.0 - float(((y - yhat) ** 2).sum()) / float(((y - y.mean()) ** 2).sum())
        r = float(np.corrcoef(y, yhat)[0, 1])
        alpha = float(yhat.mean() / y.mean())
        beta = float((yhat.std(ddof=1) / yhat.mean()) / (y.std(ddof=1) / y.mean()))
        want_kge = 1.0 - math.sqrt((r - 1) ** 2 + (alpha - 1) ** 2 + (beta - 1) ** 2)
        rep = kge(y, yhat)
        assert rep.nse == pytest.approx(want_nse, abs=1e-12)
        assert rep.kge == pytest.approx(want_kge, abs=1e-12)
        assert rep.r == pytest.approx(r, abs=1e-12)


@pytest.mark.acceptance("criterion-02 CART split brute-force oracle")
def test_c02_split_search_matches_brute_force():
    rng = np.random.default_rng(2020)
    for _ in range(200):
        n = int(rng.integers(4, 51))
        p = int(rng.integers(1, 6))
        X = rng.random((n, p))
        y = rng.normal(0.0, 1.0, n)
        got = best_split(X, y)
        want = brute_force_split(X, y)
        assert_split_matches_oracle(X, y, got, want)


@pytest.mark.acceptance("criterion-03 RF interpolation of distinct rows")
def test_c03_rf_interpolates_exactly():
    rng = np.random.default_rng(33)
    X = rng.random((150, 6))  # continuous draws: rows distinct
    y = rng.integers(-30, 30, 150).astype(float)
    d = Dataset("interp", y, X, "y", [f"x{j}" for j in range(6)])
    params = RfHyperParams(
        mtry_fraction=1.0,
        num_trees=50,
        replace=False,
        min_node_size_exponent=0.0,
        sample_fraction=1.0,
    )
    forest = fit_forest(d, params, seed=7)
    assert nse(y, forest.predict(X)) == 1.0


@pytest.mark.acceptance("criterion-04 GBT closed forms")
def test_c04_gbt_closed_forms():
    # leaf weight vs numeric minimization of the scalar objective
    rng = np.random.default_rng(44)
    for _ in range(10_000):
        G = float(rng.uniform(-30, 30))
        H = float(rng.uniform(1.0, 100.0))
        lam = float(rng.uniform(0.0, 50.0))
        alpha = float(rng.uniform(0.0, 50.0))

        def objective(w):
            return G * w + 0.5 * (H + lam) * w * w + alpha * abs(w)

        grid = np.linspace(-31.0, 31.0, 1241)
        w0 = grid[int(np.argmin(objective(grid)))]
        step = grid[1] - grid[0]
        res = minimize_scalar(
            objective, bounds=(w0 - step, w0 + step), method="bounded",
            options={"xatol": 1e-10},
        )
        numeric = min((float(res.x), 0.0), key=objective)
        assert leaf_weight(G, H, lam, alpha) == pytest.approx(numeric, abs=1e-6)

    # training squared error is non-increasing over 200 rounds
    for ds_seed in range(20):
        n = int(np.random.default_rng(ds_seed).integers(30, 80))
        d = friedman1(n=n, p=5, noise_sd=1.0, seed=ds_seed, name=f"mono{ds_seed}")
        eta = [0.05, 0.3, 0.7, 1.0][ds_seed % 4]
        lam = [0.0, 1.0, 10.0][ds_seed % 3]
        params = GbtHyperParams(nrounds=200, eta=eta, lambda_=lam, alpha=0.0, max_depth=4)
        model = fit_gbt(d, params, seed=ds_seed)
        preds = np.full(d.n, model.base_score)
        prev = float(((d.response - preds) ** 2).sum())
        for tree in model.trees:
            tree.add_predictions(d.features, preds)
            now = float(((d.response - preds) ** 2).sum())
            assert now <= prev + 1e-9
            prev = now


@pytest.mark.acceptance("criterion-05 search-space conformance")
def test_c05_search_space_conformance():
    n = 571
    rng_rf = np.random.default_rng(55)
    space_rf = hpo.search_space("rf")
    from hydrotune._rand import rng_for

    stream = rng_for(55)
    for _ in range(10_000):
        p = hpo.sample_random(space_rf, n, stream)
        assert 0.0 < p.mtry_fraction <= 1.0
        assert 10 <= p.num_trees <= 2000
        assert isinstance(p.replace, bool)
        assert 0.0 <= p.min_node_size_exponent <= 1.0
        assert 1 <= p.effective_min_node(n) <= n
        assert 0.1 <= p.sample_fraction <= 1.0

    space_gbt = hpo.search_space("gbt")
    stream = rng_for(56)
    for _ in range(10_000):
        p = hpo.sample_random(space_gbt, n, stream)
        assert 1 <= p.nrounds <= 5000
        assert 2.0 ** -10 <= p.eta <= 1.0
        assert 0.1 <= p.subsample <= 1.0
        assert 1 <= p.max_depth <= 15
        assert 2.0 ** 0 <= p.min_child_weight <= 2.0 ** 7
        assert 0.0 < p.colsample_bytree <= 1.0
        assert 2.0 ** -10 <= p.alpha <= 2.0 ** 10
        assert 2.0 ** -10 <= p.lambda_ <= 2.0 ** 10


@pytest.mark.acceptance("criterion-06 synthetic skill floor")
def test_c06_synthetic_skill_floor():
    d = friedman1(n=500, p=10, noise_sd=1.0, seed=606, name="skill")
    train, test = train_test_split(d, SplitSpec(0.2, seed=1))

    for algorithm in ("rf", "gbt"):
        model = hpo.fit_model(train, hpo.default_params(algorithm), algorithm, seed=2, n_jobs=2)
        test_nse = nse(test.response, model.predict(test.features))
        assert test_nse >= 0.6, f"default {algorithm} test NSE {test_nse:.3f}"

    search_seed = 3
    folds = kfold_partition(train, k=10, seed=search_seed)
    for algorithm in ("rf", "gbt"):
        base = hpo.evaluate_config(
            train, hpo.default_params(algorithm), algorithm, folds,
            metric="nse", seed=4, strategy="default",
        )
        trials = hpo.run_random_search(
            train, algorithm, iterations=30, metric="nse", seed=search_seed, k=10, n_jobs=2,
        )
        best = trials[0].cv_mean_nse
        assert best >= base.cv_mean_nse - 0.02, (
            f"{algorithm}: best-of-30 {best:.4f} vs default {base.cv_mean_nse:.4f}"
        )


@pytest.mark.acceptance("criterion-07 meta-pipeline recovery")
def test_c07_meta_pipeline_recovery():
    # planted monotone signal in sample_fraction
    db = planted_rf_db(n_datasets=8, trials=150, seed=77, noise=0.02)
    model = metalearn.train_meta_model(db, "kge", "rf", uses_metadata=True, seed=8)
    d_new = tiny_dataset("fresh", 909)
    pool_fracs_hit = 0
    for seed in range(100):
        pool = metalearn.candidate_pool("rf", 100, seed=seed)
        choice, _ = metalearn.recommend(model, d_new, candidates=pool)
        fractions = np.array([c.sample_fraction for c in pool])
        if choice.sample_fraction >= np.quantile(fractions, 0.9):
            pool_fracs_hit += 1
    assert pool_fracs_hit >= 95, f"best-decile hits: {pool_fracs_hit}/100"

    # the 102-trial grid per (dataset, algorithm)
    datasets = [tiny_dataset("mrec-a", 1, n=50), tiny_dataset("mrec-b", 2, n=50)]
    records = metalearn.build_meta_database(datasets, iterations=100, seed=5)
    assert len(records) == len(datasets) * 2 * 102
    for ds in datasets:
        for algo in ("rf", "gbt"):
            tags = [r.strategy for r in records if r.dataset_id == ds.name and r.algorithm == algo]
            assert len(tags) == 102
            assert tags.count("default") == 1
            assert tags.count("opt_default") == 1
            assert tags.count("random") == 100


@pytest.mark.acceptance("criterion-08 fit-time grows linearly with trees")
def test_c08_timing_shape():
    d = friedman1(n=1000, p=10, noise_sd=1.0, seed=88, name="timing")
    records = bench.time_vs_trees(
        d, start=50, stop=2000, step=100, reps=3, engines=("rf",), seed=1
    )
    trees = np.array([r.value for r in records], dtype=float)
    means = np.array([r.mean for r in records])
    assert len(records) == 20
    assert (means > 0).all()
    fit = stats.linregress(trees, means)
    assert fit.slope > 0
    assert fit.pvalue < 0.01
    assert fit.rvalue ** 2 >= 0.95, f"R^2 = {fit.rvalue ** 2:.4f}"


def _friedman_csv(path, n, seed):
    d = friedman1(n=n, p=5, noise_sd=0.5, seed=seed)
    lines = ["y," + ",".join(d.feature_names)]
    for i in range(d.n):
        lines.append(",".join([repr(float(d.response[i]))] + [repr(float(v)) for v in d.features[i]]))
    path.write_text("\n".join(lines) + "\n")
    return path


def _run_cli(args):
    code = cli_main([str(a) for a in args])
    assert code == 0, f"command failed: {args}"


def _tree_bytes(root):
    return {p.name: p.read_bytes() for p in sorted(root.iterdir()) if p.is_file()}


@pytest.mark.acceptance("criterion-09 CLI determinism")
def test_c09_cli_determinism(tmp_path):
    data_a = _friedman_csv(tmp_path / "a.csv", 60, 1)
    data_b = _friedman_csv(tmp_path / "b.csv", 60, 2)

    # build shared upstream artifacts once
    db_dir = tmp_path / "db"
    _run_cli(["build-metadb", data_a, data_b, "--iters", "2", "--out-dir", db_dir, "--seed", "3"])
    meta_dir = tmp_path / "meta"
    _run_cli(["train-meta", db_dir / "metadb.ndjson", "--algo", "rf", "--target", "kge",
              "--out-dir", meta_dir, "--seed", "3"])
    meta_free_dir = tmp_path / "meta_free"
    _run_cli(["train-meta", db_dir / "metadb.ndjson", "--algo", "rf", "--target", "kge",
              "--no-metadata", "--out-dir", meta_free_dir, "--seed", "3"])
    power_dir = tmp_path / "power"
    _run_cli(["bench-power", data_a, data_b, "--iters", "2", "--pool", "4",
              "--out-dir", power_dir, "--seed", "3"])
    time_dir = tmp_path / "time"
    _run_cli(["bench-time", data_a, "--start", "5", "--stop", "15", "--step", "5",
              "--reps", "2", "--engines", "rf", "--timer", "fixed",
              "--out-dir", time_dir, "--seed", "3"])

    commands = {
        "clean": ["clean", data_a],
        "evaluate": ["evaluate", data_a, "--algo", "rf", "--folds", "4", "--seed", "2"],
        "search": ["search", data_a, "--algo", "gbt", "--iters", "3", "--folds", "4", "--seed", "2"],
        "build-metadb": ["build-metadb", data_a, data_b, "--iters", "2", "--seed", "3"],
        "train-meta": ["train-meta", db_dir / "metadb.ndjson", "--algo", "gbt",
                        "--target", "nse", "--seed", "4"],
        "recommend": ["recommend", data_b, "--meta", meta_dir / "meta_model.json",
                       "--pool", "8", "--seed", "5"],
        "optimal-defaults": ["optimal-defaults", "--meta", meta_free_dir / "meta_model.json",
                              "--pool", "8", "--seed", "6"],
        "bench-time": ["bench-time", data_a, "--start", "5", "--stop", "15", "--step", "5",
                        "--reps", "2", "--engines", "rf", "--timer", "fixed", "--seed", "7"],
        "bench-power": ["bench-power", data_a, data_b, "--iters", "2", "--pool", "4", "--seed", "8"],
        "report": ["report", "--ranks", power_dir / "ranks.csv",
                    "--timings", time_dir / "timings.csv", "--seed", "9"],
    }

    for name, argv in commands.items():
        runs = []
        for variant, threads in (("r1", "1"), ("r2", "1"), ("r3", "2")):
            out = tmp_path / f"{name}-{variant}"
            _run_cli(argv + ["--out-dir", out, "--threads", threads])
            runs.append(_tree_bytes(out))
        assert runs[0] == runs[1], f"{name}: rerun differs"
        assert runs[0] == runs[2], f"{name}: worker count changed outputs"


@pytest.mark.acceptance("criterion-10 cleaning conformance")
def test_c10_cleaning_conformance():
    rng = np.random.default_rng(10)

    # missing-response rows removed
    resp = rng.random(10)
    resp[[2, 6]] = np.nan
    d = Dataset("rows", resp, rng.random((10, 2)), "y", ["a", "b"])
    assert clean(d, 0.5).n == 8

    # column thresholds 0.5 and 0.1 on {0%, 20%, 60%} missingness
    feats = rng.random((10, 3))
    feats[:2, 1] = np.nan
    feats[:6, 2] = np.nan
    d = Dataset("cols", rng.random(10), feats, "y", ["a", "b", "c"])
    assert clean(d, 0.5).feature_names == ["a", "b"]
    assert clean(d, 0.1).feature_names == ["a"]

    # two-variant trigger: any column above 10% missing
    from hydrotune.dataset import make_variants

    low = rng.random((20, 2))
    low[0, 1] = np.nan  # 5%
    one = Dataset("low", rng.random(20), low, "y", ["a", "b"])
    assert len(make_variants(one)) == 1
    high = rng.random((20, 2))
    high[:6, 1] = np.nan  # 30%
    two = Dataset("high", rng.random(20), high, "y", ["a", "b"])
    variants = make_variants(two)
    assert len(variants) == 2
    assert variants[0].p == 2 and variants[1].p == 1

    # median imputation fixture
    resp = np.arange(4, dtype=float)
    col = np.array([[1.0], [np.nan], [3.0], [5.0]])
    d = Dataset("imp", resp, col, "y", ["a"])
    assert clean(d, 1.0).features[1, 0] == 3.0
