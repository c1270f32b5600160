import json

import pytest

from hydrotune.cli import main

from conftest import friedman1


def write_csv(path, n=60, p=5, seed=0, missing=False):
    d = friedman1(n=n, p=p, noise_sd=0.5, seed=seed)
    rows = ["y," + ",".join(d.feature_names)]
    for i in range(d.n):
        cells = [repr(float(d.response[i]))] + [repr(float(v)) for v in d.features[i]]
        if missing and i % 7 == 3:
            cells[2] = ""
        if missing and i % 11 == 5:
            cells[0] = "NA"
        rows.append(",".join(cells))
    path.write_text("\n".join(rows) + "\n")
    return path


def run(args):
    return main([str(a) for a in args])


def read_json(path):
    return json.loads(path.read_text())


class TestClean:
    def test_writes_variants_and_manifests(self, tmp_path):
        # one feature column is ~14% missing, so both thresholds appear
        csv = write_csv(tmp_path / "river.csv", missing=True)
        out = tmp_path / "out"
        assert run(["clean", csv, "--out-dir", out]) == 0
        assert (out / "river__t50.csv").exists()
        assert (out / "river__t10.csv").exists()
        manifest = read_json(out / "river__t10.manifest.json")
        assert manifest["cleaning"]["rows_dropped"]
        assert manifest["cleaning"]["columns_dropped"] == ["x1"]
        assert (out / "clean_manifest.json").exists()

    def test_custom_threshold(self, tmp_path):
        csv = write_csv(tmp_path / "river.csv", missing=True)
        out = tmp_path / "out"
        assert run(["clean", csv, "--threshold", "0.5", "--out-dir", out]) == 0
        assert (out / "river.csv").exists()

    def test_unreadable_input_is_data_error(self, tmp_path):
        assert run(["clean", tmp_path / "missing.csv", "--out-dir", tmp_path / "o"]) == 2

    def test_unknown_flag_is_usage_error(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            run(["clean", "--frobnicate", "x.csv"])
        assert exc.value.code == 1


class TestEvaluate:
    def test_writes_report_and_model(self, tmp_path):
        csv = write_csv(tmp_path / "d.csv")
        out = tmp_path / "out"
        code = run([
            "evaluate", csv, "--algo", "rf", "--strategy", "default",
            "--folds", "5", "--out-dir", out, "--seed", "3",
        ])
        assert code == 0
        report = read_json(out / "evaluate_report.json")
        assert report["algorithm"] == "rf"
        assert len(report["cv_scores"]) == 5
        assert report["test_score"] is not None
        assert (out / "model.json").exists()

    def test_params_file_override(self, tmp_path):
        csv = write_csv(tmp_path / "d.csv")
        pfile = tmp_path / "params.json"
        pfile.write_text(json.dumps({
            "mtry_fraction": 0.8, "num_trees": 20, "replace": True,
            "min_node_size_exponent": 0.0, "sample_fraction": 1.0,
        }))
        out = tmp_path / "out"
        code = run([
            "evaluate", csv, "--algo", "rf", "--params-file", pfile,
            "--folds", "4", "--out-dir", out,
        ])
        assert code == 0
        report = read_json(out / "evaluate_report.json")
        assert report["params"]["num_trees"] == 20
        assert report["strategy"] == "custom"


class TestSearch:
    def test_trial_log_and_best_config(self, tmp_path):
        csv = write_csv(tmp_path / "d.csv")
        out = tmp_path / "out"
        code = run([
            "search", csv, "--algo", "gbt", "--iters", "4", "--metric", "kge",
            "--folds", "4", "--out-dir", out, "--seed", "5",
        ])
        assert code == 0
        lines = (out / "trials.ndjson").read_text().splitlines()
        assert 1 <= len(lines) <= 4
        best = read_json(out / "best_config.json")
        assert best["strategy"] == "random"
        assert best["test_score"] is not None
        kges = [json.loads(l)["cv_mean_kge"] for l in lines]
        assert kges == sorted(kges, reverse=True)
        assert (out / "trials.csv").exists()


@pytest.fixture(scope="module")
def metadb_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("meta")
    a = write_csv(root / "a.csv", seed=1)
    b = write_csv(root / "b.csv", seed=2)
    out = root / "db"
    assert run([
        "build-metadb", a, b, "--iters", "3", "--out-dir", out, "--seed", "7",
    ]) == 0
    return root, out


class TestMetaPipeline:
    def test_metadb_files(self, metadb_dir):
        root, out = metadb_dir
        lines = (out / "metadb.ndjson").read_text().splitlines()
        assert len(lines) == 2 * 2 * 5  # two datasets, two algorithms, 2+3 trials
        assert (out / "metadb.csv").exists()
        manifest = read_json(out / "build_metadb_manifest.json")
        assert manifest["records"] == len(lines)

    def test_train_meta_and_recommend(self, metadb_dir, tmp_path):
        root, db_out = metadb_dir
        model_out = tmp_path / "model"
        assert run([
            "train-meta", db_out / "metadb.ndjson", "--algo", "rf",
            "--target", "kge", "--out-dir", model_out, "--seed", "8",
        ]) == 0
        model_file = model_out / "meta_model.json"
        assert model_file.exists()

        new_csv = write_csv(tmp_path / "new.csv", seed=9)
        rec_out = tmp_path / "rec"
        assert run([
            "recommend", new_csv, "--meta", model_file, "--pool", "10",
            "--out-dir", rec_out, "--seed", "9",
        ]) == 0
        rec = read_json(rec_out / "recommendation.json")
        assert rec["algorithm"] == "rf"
        assert "num_trees" in rec["params"]

    def test_optimal_defaults_requires_metadata_free(self, metadb_dir, tmp_path):
        root, db_out = metadb_dir
        model_out = tmp_path / "nm"
        assert run([
            "train-meta", db_out / "metadb.ndjson", "--algo", "gbt",
            "--target", "nse", "--no-metadata", "--out-dir", model_out,
        ]) == 0
        od_out = tmp_path / "od"
        assert run([
            "optimal-defaults", "--meta", model_out / "meta_model.json",
            "--pool", "10", "--out-dir", od_out,
        ]) == 0
        doc = read_json(od_out / "new_defaults.json")
        assert doc["params"]["nrounds"] >= 1

    def test_optimal_defaults_rejects_metadata_model(self, metadb_dir, tmp_path):
        root, db_out = metadb_dir
        model_out = tmp_path / "wm"
        assert run([
            "train-meta", db_out / "metadb.ndjson", "--algo", "rf",
            "--target", "kge", "--out-dir", model_out,
        ]) == 0
        assert run([
            "optimal-defaults", "--meta", model_out / "meta_model.json",
            "--out-dir", tmp_path / "x",
        ]) == 2


class TestBenchCommands:
    def test_bench_time_fixed_timer(self, tmp_path):
        csv = write_csv(tmp_path / "d.csv", n=80)
        out = tmp_path / "out"
        code = run([
            "bench-time", csv, "--sweep", "trees", "--start", "5", "--stop", "15",
            "--step", "5", "--reps", "2", "--engines", "rf", "--timer", "fixed",
            "--out-dir", out,
        ])
        assert code == 0
        lines = (out / "timings.csv").read_text().splitlines()
        assert len(lines) == 1 + 3 * 2  # header + 3 points x 2 reps

    def test_bench_time_unknown_engine(self, tmp_path):
        csv = write_csv(tmp_path / "d.csv")
        assert run([
            "bench-time", csv, "--engines", "spark", "--out-dir", tmp_path / "o",
        ]) == 2

    def test_bench_power_end_to_end(self, tmp_path):
        a = write_csv(tmp_path / "a.csv", seed=4)
        b = write_csv(tmp_path / "b.csv", seed=5)
        out = tmp_path / "out"
        code = run([
            "bench-power", a, b, "--iters", "2", "--pool", "4",
            "--metric", "kge", "--out-dir", out, "--seed", "1",
        ])
        assert code == 0
        for name in ("ranks.csv", "rank_matrix.csv", "deltas.csv", "method_counts.csv"):
            assert (out / name).exists()
        matrix = (out / "rank_matrix.csv").read_text().splitlines()
        assert matrix[0] == "method,a,b"

    def test_report_rederives_from_csvs(self, tmp_path):
        a = write_csv(tmp_path / "a.csv", seed=4)
        b = write_csv(tmp_path / "b.csv", seed=5)
        first = tmp_path / "first"
        assert run([
            "bench-power", a, b, "--iters", "2", "--pool", "4", "--out-dir", first,
        ]) == 0
        second = tmp_path / "second"
        assert run([
            "report", "--ranks", first / "ranks.csv", "--out-dir", second,
        ]) == 0
        assert (second / "rank_matrix.csv").read_bytes() == (first / "rank_matrix.csv").read_bytes()
        assert (second / "deltas.csv").read_bytes() == (first / "deltas.csv").read_bytes()
        assert (second / "method_counts.csv").read_bytes() == (first / "method_counts.csv").read_bytes()

    def test_report_with_no_inputs(self, tmp_path):
        assert run(["report", "--out-dir", tmp_path / "o"]) == 2


class TestDeterminismQuick:
    def test_search_rerun_identical(self, tmp_path):
        csv = write_csv(tmp_path / "d.csv")
        o1, o2 = tmp_path / "o1", tmp_path / "o2"
        args = ["search", csv, "--algo", "rf", "--iters", "3", "--folds", "4", "--seed", "6"]
        assert run(args + ["--out-dir", o1]) == 0
        assert run(args + ["--out-dir", o2]) == 0
        assert (o1 / "trials.ndjson").read_bytes() == (o2 / "trials.ndjson").read_bytes()
        assert (o1 / "best_config.json").read_bytes() == (o2 / "best_config.json").read_bytes()

    def test_thread_count_does_not_change_output(self, tmp_path):
        csv = write_csv(tmp_path / "d.csv")
        o1, o2 = tmp_path / "t1", tmp_path / "t2"
        base = ["evaluate", csv, "--algo", "rf", "--folds", "4", "--seed", "2"]
        assert run(base + ["--threads", "1", "--out-dir", o1]) == 0
        assert run(base + ["--threads", "2", "--out-dir", o2]) == 0
        assert (o1 / "evaluate_report.json").read_bytes() == (o2 / "evaluate_report.json").read_bytes()
        assert (o1 / "model.json").read_bytes() == (o2 / "model.json").read_bytes()


def test_help_lists_defaults(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["search", "--help"])
    assert exc.value.code == 0
    text = capsys.readouterr().out
    assert "--iters" in text and "default" in text.lower()
    assert "--seed" in text
