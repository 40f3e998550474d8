import csv
import json

import numpy as np
import pytest

import attnsl.cli as cli
from attnsl import bench, interpret
from attnsl.data import Dataset, load_csv, write_csv
from attnsl.linear import NumericError
from attnsl.pipeline import PipelineConfig, drift_correct, run_pipeline
from attnsl.simgen import DriftScenario, gen_drift_full

FAST = ["--num-trees", "30", "--cv-folds", "3"]


def run(*argv):
    return cli.main([str(a) for a in argv])


def table(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def column(path, name):
    head, rows = table(path)
    return np.array([float(r[head.index(name)]) for r in rows])


@pytest.fixture(scope="module")
def sim(tmp_path_factory):
    d = tmp_path_factory.mktemp("sim")
    assert run("simulate", "--setting", 1, "--n", 60, "--seed", 5, "--out", d) == 0
    return d


@pytest.fixture(scope="module")
def fitted(sim, tmp_path_factory):
    d = tmp_path_factory.mktemp("fit")
    assert run("fit", "--train", sim / "train.csv", "--test", sim / "test.csv", "--seed", 9, "--out", d, *FAST) == 0
    return d


class TestParser:
    @pytest.mark.parametrize("cmd", sorted(cli.COMMANDS))
    def test_help_lists_every_key(self, cmd, capsys):
        assert run(cmd, "--help") == 0
        text = capsys.readouterr().out
        for key in cli._keys(cmd):
            assert "--" + key.replace("_", "-") in text

    def test_unknown_flag(self, capsys):
        assert run("fit", "--bogus", 1) == cli.EXIT_USAGE
        assert run("frobnicate") == cli.EXIT_USAGE

    def test_unknown_config_key(self, tmp_path, capsys):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"sed": 3}))
        assert run("simulate", "--config", p, "--out", tmp_path) == cli.EXIT_USAGE
        assert "sed" in capsys.readouterr().err

    def test_flags_override_config(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"seed": 3, "n": 40}))
        ns = cli.build_parser().parse_args(["simulate", "--config", str(p), "--seed", "4"])
        conf = cli.resolve("simulate", ns)
        assert conf["seed"] == 4 and conf["n"] == 40 and conf["setting"] == 1

    def test_threads_env_default(self, monkeypatch):
        monkeypatch.setenv("ATTNSL_THREADS", "3")
        ns = cli.build_parser().parse_args(["simulate"])
        assert cli.resolve("simulate", ns)["threads"] == 3

    def test_bad_pipeline_value(self, sim, tmp_path):
        assert run("fit", "--train", sim / "train.csv", "--test", sim / "test.csv", "--temperature", 0,
                   "--out", tmp_path) == cli.EXIT_USAGE


class TestSimulate:
    def test_setting_shapes(self, tmp_path):
        assert run("simulate", "--out", tmp_path / "a") == 0
        head, rows = table(tmp_path / "a" / "train.csv")
        assert len(rows) == 300 and len([h for h in head if h not in ("y", "row_id")]) == 30
        assert run("simulate", "--setting", 2, "--out", tmp_path / "b") == 0
        head, _ = table(tmp_path / "b" / "train.csv")
        assert len([h for h in head if h not in ("y", "row_id")]) == 100

    def test_byte_identical(self, tmp_path):
        for sub in ("a", "b"):
            assert run("simulate", "--setting", 3, "--n", 50, "--seed", 2, "--out", tmp_path / sub) == 0
        for f in ("train.csv", "test.csv", "truth.csv"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_drift_kind(self, tmp_path):
        assert run("simulate", "--kind", "drift", "--n", 30, "--out", tmp_path) == 0
        for f in ("time1", "time2", "time3", "time1_test", "truth"):
            assert (tmp_path / f"{f}.csv").is_file()

    def test_bad_setting(self, tmp_path):
        assert run("simulate", "--setting", 7, "--out", tmp_path) == cli.EXIT_USAGE


class TestFit:
    def test_artifacts(self, fitted, capsys):
        for f in ("model.json", "predictions.csv", "coefficients.csv", "attention.csv"):
            assert (fitted / f).is_file()

    def test_matches_library(self, sim, fitted):
        train, test = load_csv(sim / "train.csv", "y"), load_csv(sim / "test.csv", "y")
        r = run_pipeline(train, test.features, PipelineConfig(seed=9, num_trees=30, cv_folds=3))
        np.testing.assert_array_equal(column(fitted / "predictions.csv", "y_blend"), r.y_blend)
        np.testing.assert_array_equal(column(fitted / "predictions.csv", "y_base"), r.y_base)
        np.testing.assert_array_equal(column(fitted / "predictions.csv", "y"), test.response)

    def test_prints_summary(self, sim, tmp_path, capsys):
        run("fit", "--train", sim / "train.csv", "--test", sim / "test.csv", "--out", tmp_path, *FAST)
        out = capsys.readouterr().out
        assert "lambda_hat:" in out and "mixing:" in out and "test PSE blended:" in out

    def test_mixing_zero(self, sim, tmp_path):
        assert run("fit", "--train", sim / "train.csv", "--test", sim / "test.csv", "--mixing", 0,
                   "--out", tmp_path, *FAST) == 0
        p = tmp_path / "predictions.csv"
        np.testing.assert_array_equal(column(p, "y_blend"), column(p, "y_base"))

    def test_thread_invariance(self, sim, tmp_path):
        for t in (1, 2):
            assert run("fit", "--train", sim / "train.csv", "--test", sim / "test.csv", "--threads", t,
                       "--out", tmp_path / str(t), *FAST) == 0
        for f in ("model.json", "predictions.csv", "coefficients.csv", "attention.csv"):
            assert (tmp_path / "1" / f).read_bytes() == (tmp_path / "2" / f).read_bytes()

    def test_split(self, sim, tmp_path):
        assert run("fit", "--train", sim / "train.csv", "--split", 0.5, "--out", tmp_path, *FAST) == 0
        assert len(table(tmp_path / "predictions.csv")[1]) == 30

    def test_missing_response(self, sim, tmp_path, capsys):
        assert run("fit", "--train", sim / "train.csv", "--test", sim / "test.csv", "--response", "target",
                   "--out", tmp_path) == cli.EXIT_DATA
        assert "target" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert run("fit", "--train", tmp_path / "none.csv", "--split", 0.5, "--out", tmp_path) == cli.EXIT_DATA

    def test_numeric_failure(self, sim, tmp_path, monkeypatch):
        def fail(*a, **k):
            raise NumericError("singular")
        monkeypatch.setattr(cli, "run_pipeline", fail)
        assert run("fit", "--train", sim / "train.csv", "--test", sim / "test.csv",
                   "--out", tmp_path) == cli.EXIT_NUMERIC


class TestPredict:
    def test_reproduces_fit(self, sim, fitted, tmp_path):
        assert run("predict", "--model", fitted / "model.json", "--train", sim / "train.csv",
                   "--test", sim / "test.csv", "--out", tmp_path) == 0
        for c in ("y_base", "y_attn", "y_blend"):
            np.testing.assert_array_equal(column(tmp_path / "predictions.csv", c),
                                          column(fitted / "predictions.csv", c))

    def test_features_only(self, sim, fitted, tmp_path):
        test = load_csv(sim / "test.csv", "y")
        with open(tmp_path / "x.csv", "w", encoding="utf-8") as fh:
            fh.write(",".join(test.feature_names) + "\n")
            for row in test.features[:5]:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
        assert run("predict", "--model", fitted / "model.json", "--train", sim / "train.csv",
                   "--test", tmp_path / "x.csv", "--out", tmp_path / "o") == 0
        head, rows = table(tmp_path / "o" / "predictions.csv")
        assert len(rows) == 5 and "y" not in head


class TestInterpret:
    def test_matches_library(self, fitted, tmp_path):
        assert run("interpret", "--coefficients", fitted / "coefficients.csv",
                   "--predictions", fitted / "predictions.csv", "--k", 3, "--out", tmp_path) == 0
        head, rows = table(fitted / "coefficients.csv")
        B = np.array([[float(v) for v in r[1:]] for r in rows])
        dend = interpret.protoclust(B)
        assign = interpret.cut_clusters(dend, 3)
        ref = tmp_path / "ref"
        ref.mkdir()
        interpret.write_heatmap_csv(ref / "heatmap.csv", B, assign, dend, head[1:], [r[0] for r in rows])
        assert (ref / "heatmap.csv").read_bytes() == (tmp_path / "heatmap.csv").read_bytes()
        assert json.loads((tmp_path / "dendrogram.json").read_text())
        assert len(table(tmp_path / "summary.csv")[1]) == 3

    def test_k_extremes(self, fitted, tmp_path):
        n = len(table(fitted / "coefficients.csv")[1])
        assert run("interpret", "--coefficients", fitted / "coefficients.csv", "--k", 1, "--out", tmp_path / "a") == 0
        head, rows = table(tmp_path / "a" / "summary.csv")
        assert len(rows) == 1 and int(rows[0][head.index("size")]) == n
        assert run("interpret", "--coefficients", fitted / "coefficients.csv", "--k", n,
                   "--out", tmp_path / "b") == 0
        head, rows = table(tmp_path / "b" / "summary.csv")
        assert [int(r[head.index("size")]) for r in rows] == [1] * n

    def test_k_out_of_range(self, fitted, tmp_path):
        assert run("interpret", "--coefficients", fitted / "coefficients.csv", "--k", 0,
                   "--out", tmp_path) == cli.EXIT_USAGE
        assert run("interpret", "--coefficients", fitted / "coefficients.csv", "--k", 10**6,
                   "--out", tmp_path) == cli.EXIT_USAGE


@pytest.fixture(scope="module")
def files(tmp_path_factory):
    d = tmp_path_factory.mktemp("drift")
    data = gen_drift_full(DriftScenario(n_train=200, n_test=60), 1)
    write_csv(data.d1, d / "t1.csv")
    write_csv(data.d2, d / "t2.csv")
    write_csv(data.d3, d / "t3.csv")
    model = bench.drift_model(data.d1)
    (d / "model.json").write_text(model.to_json())
    return d, data, model


class TestDrift:
    def test_matches_library(self, files, tmp_path):
        d, data, model = files
        assert run("drift", "--model", d / "model.json", "--recent", d / "t2.csv", "--predict", d / "t3.csv",
                   "--out", tmp_path) == 0
        ref = drift_correct(model, data.d2.features, data.d2.response, data.d3.features, 0.1)
        np.testing.assert_array_equal(column(tmp_path / "predictions.csv", "prediction"), ref)

    def _recent(self, d, data, model, offset):
        X = data.d2.features
        rec = Dataset.from_arrays(X, model.predict(X) + offset, data.d2.feature_names)
        write_csv(rec, d / f"recent{offset}.csv")
        return d / f"recent{offset}.csv"

    @pytest.mark.parametrize("offset", [0.0, 2.5])
    def test_offset_correction(self, files, tmp_path, offset):
        d, data, model = files
        assert run("drift", "--model", d / "model.json", "--recent", self._recent(d, data, model, offset),
                   "--predict", d / "t3.csv", "--out", tmp_path) == 0
        np.testing.assert_allclose(column(tmp_path / "predictions.csv", "correction"), offset, atol=1e-12)

    def test_fit_on_train(self, files, tmp_path):
        d, _, _ = files
        assert run("drift", "--model", tmp_path / "m.json", "--train", d / "t1.csv", "--recent", d / "t2.csv",
                   "--predict", d / "t3.csv", "--out", tmp_path) == 0
        assert (tmp_path / "m.json").read_text() == (d / "model.json").read_text()

    def test_schema_mismatch(self, files, sim, tmp_path):
        d, _, _ = files
        assert run("drift", "--model", d / "model.json", "--recent", sim / "train.csv", "--predict",
                   sim / "test.csv", "--out", tmp_path) == cli.EXIT_DATA
        assert run("drift", "--model", tmp_path / "none.json", "--recent", d / "t2.csv", "--predict",
                   d / "t3.csv", "--out", tmp_path) == cli.EXIT_DATA


class TestBenchmark:
    def test_smoke_all_models(self, tmp_path):
        assert run("benchmark", "--setting", 4, "--n", 60, "--replications", 1, "--models", ",".join(bench.MODELS),
                   "--out", tmp_path, *FAST) == 0
        _, rows = table(tmp_path / "report.csv")
        assert [r[0] for r in rows] == list(bench.MODELS)

    def test_lasso_only(self, tmp_path):
        assert run("benchmark", "--models", "lasso", "--n", 60, "--replications", 2, "--out", tmp_path) == 0
        _, rows = table(tmp_path / "report.csv")
        assert len(rows) == 1 and float(rows[0][4]) == 0.0

    def test_matches_library_and_threads(self, tmp_path):
        args = ["benchmark", "--setting", 3, "--n", 60, "--replications", 2, "--models", "lasso,knn,attention",
                "--seed", 4, *FAST]
        assert run(*args, "--out", tmp_path / "a") == 0
        assert run(*args, "--threads", 2, "--out", tmp_path / "b") == 0
        for f in ("report.csv", "report.txt", "replications.csv"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
        rep = bench.run_experiment(bench.ExperimentConfig(setting=3, n=60, replications=2, seed=4,
                                                          models=("lasso", "knn", "attention"),
                                                          pipeline={"num_trees": 30, "cv_folds": 3}))
        assert rep.to_csv() == (tmp_path / "a" / "report.csv").read_text()

    def test_drift_source(self, tmp_path):
        assert run("benchmark", "--source", "drift", "--replications", 1, "--out", tmp_path) == 0
        assert (tmp_path / "drift_report.csv").is_file()
