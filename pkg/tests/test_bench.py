import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import attnsl.bench as bench
from attnsl.bench import (DRIFT_ARMS, DriftReport, ExperimentConfig, ExperimentError, MetricReport, knn_predict,
                          pse, relative_improvement, run_drift_experiment, run_experiment)
from attnsl.data import Dataset, derive_seed, standardize, apply_standardization, write_csv
from attnsl.pipeline import PipelineConfig, run_pipeline
from attnsl.simgen import DriftScenario, gen_homogeneous

FAST = {"num_trees": 20, "cv_folds": 3}


def knn_oracle(Xtr, ytr, Xq, k):
    """Sort every training row by (distance, index) and average the first k responses."""
    _, params = standardize(Xtr)
    Z, Zq = apply_standardization(params, Xtr), apply_standardization(params, Xq)
    out = []
    for q in Zq:
        d = [(sum((q[c] - z[c]) ** 2 for c in range(len(q))), j) for j, z in enumerate(Z)]
        out.append(np.mean([ytr[j] for _, j in sorted(d)[:k]]))
    return np.array(out)


class TestMetrics:
    def test_pse(self):
        assert pse([1.0, 2.0], [1.0, 2.0]) == 0.0
        assert pse([0.0, 0.0], [1.0, -1.0]) == 1.0
        with pytest.raises(ValueError):
            pse([1.0], [1.0, 2.0])
        with pytest.raises(ValueError):
            pse([], [])

    def test_pse_loop_oracle(self, rng):
        y, f = rng.normal(size=37), rng.normal(size=37)
        ref = sum((a - b) ** 2 for a, b in zip(y, f)) / 37
        assert pse(y, f) == pytest.approx(ref, abs=1e-12)

    def test_relative_improvement(self):
        assert relative_improvement(10, 8) == pytest.approx(20)
        assert relative_improvement(10, 10) == 0
        assert relative_improvement(10, 12) == pytest.approx(-20)
        with pytest.raises(ValueError):
            relative_improvement(0.0, 1.0)


class TestKNN:
    def _grid(self):
        g = np.array([[a, b] for a in range(-2, 3) for b in range(-2, 3)], dtype=float)
        return Dataset.from_arrays(g, np.arange(25.0))

    def test_exact_match(self):
        d = self._grid()
        r = knn_predict(d, d.features[7:8], [1])
        assert r.predictions[0] == 7.0 and r.k == 1 and r.cv_errors == {}

    def test_all_rows(self):
        d = self._grid()
        r = knn_predict(d, np.array([[0.3, -1.2], [5.0, 5.0]]), [25])
        np.testing.assert_array_equal(r.predictions, 12.0)

    @pytest.mark.parametrize("k", [1, 2, 3, 4, 5, 9, 10])
    def test_grid_oracle(self, k):
        d = self._grid()
        Xq = np.array([[0.5, 0.5], [0.0, 0.0], [-2.0, 1.5], [1.5, -0.5], [3.0, 3.0]])
        np.testing.assert_array_equal(knn_predict(d, Xq, [k]).predictions,
                                      knn_oracle(d.features, d.response, Xq, k))

    @given(st.integers(0, 10**6))
    def test_random_oracle_and_cv(self, seed):
        rng = np.random.default_rng(seed)
        d = Dataset.from_arrays(rng.normal(size=(40, 3)) * [1, 5, 0.2], rng.normal(size=40))
        Xq = rng.normal(size=(6, 3))
        r = knn_predict(d, Xq, (3, 5, 10, 15), seed=seed)
        assert r.k == min(r.cv_errors, key=lambda k: (r.cv_errors[k], k))
        np.testing.assert_allclose(r.predictions, knn_oracle(d.features, d.response, Xq, r.k), rtol=1e-12)

    def test_errors(self):
        d = self._grid()
        with pytest.raises(ValueError):
            knn_predict(d, d.features[:1], [])
        with pytest.raises(ValueError):
            knn_predict(d, d.features[:1], [26])


class TestMetricReport:
    def test_se_oracle(self, rng):
        P = rng.random((7, 3))
        I = rng.normal(size=(7, 3))
        r = MetricReport(("lasso", "a", "b"), P, I, tuple(range(7)))
        for j in range(3):
            mu = sum(I[:, j]) / 7
            sd = (sum((v - mu) ** 2 for v in I[:, j]) / 6) ** 0.5
            assert r.se_improvement[j] == pytest.approx(sd / 7 ** 0.5, abs=1e-12)
            assert r.mean_improvement[j] == pytest.approx(mu, abs=1e-12)
        assert r.cell("a") == (pytest.approx(I[:, 1].mean()), pytest.approx(r.se_improvement[1]))

    def test_single_replication_se(self):
        r = MetricReport(("lasso",), np.ones((1, 1)), np.zeros((1, 1)), (0,))
        assert np.isnan(r.se_pse[0])
        assert "nan" not in r.to_text()

    def test_csv(self, tmp_path):
        r = MetricReport(("lasso", "knn"), np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[0.0, -100.0],
                                                                                        [0.0, -33.0]]), (1, 2))
        text = r.to_csv(tmp_path / "r.csv")
        assert (tmp_path / "r.csv").read_text() == text
        lines = text.splitlines()
        assert lines[0] == "model,replications,mean_pse,se_pse,mean_improvement,se_improvement"
        assert lines[2].split(",")[:5] == ["knn", "2", "3.0", "1.0", "-66.5"]


class TestExperimentConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            ExperimentConfig(models=("lasso", "svm"))
        with pytest.raises(ValueError):
            ExperimentConfig(source="csv")
        with pytest.raises(ValueError):
            ExperimentConfig(pipeline={"bogus": 1})
        with pytest.raises(ValueError):
            ExperimentConfig.from_dict({"replicates": 3})

    def test_json(self, tmp_path):
        c = ExperimentConfig(setting=3, models=("lasso", "knn"), replications=4, pipeline=FAST)
        p = tmp_path / "c.json"
        import json
        p.write_text(json.dumps(c.to_dict()))
        assert ExperimentConfig.from_json(p) == c


class TestRunExperiment:
    def _cfg(self, **kw):
        base = dict(source="homogeneous", n=60, p=5, models=("lasso", "rf", "knn", "gbt"), replications=3,
                    seed=11, pipeline=FAST)
        base.update(kw)
        return ExperimentConfig(**base)

    def test_lasso_only(self):
        r = run_experiment(self._cfg(models=("lasso",)))
        np.testing.assert_array_equal(r.improvement, 0.0)
        assert r.models == ("lasso",) and r.pse.shape == (3, 1)

    def test_deterministic_and_thread_free(self):
        a = run_experiment(self._cfg())
        b = run_experiment(self._cfg())
        c = run_experiment(self._cfg(threads=3))
        assert a.to_csv() == b.to_csv() == c.to_csv()
        assert a.seeds == tuple(derive_seed(11, r) for r in range(3))

    def test_models_do_not_change_data(self):
        a = run_experiment(self._cfg(models=("lasso",)))
        b = run_experiment(self._cfg())
        np.testing.assert_array_equal(a.pse[:, 0], b.pse[:, 0])

    def test_lasso_matches_pipeline_baseline(self):
        train, test, _ = gen_homogeneous(60, 5, 4)
        preds = bench._fit_models(self._cfg(models=("lasso", "attention")), train, test, 4)
        r = run_pipeline(train, test.features, PipelineConfig(seed=4, **FAST))
        np.testing.assert_array_equal(preds["lasso"], r.y_base)
        np.testing.assert_array_equal(preds["attention"], r.y_blend)

    def test_improvement_formula(self):
        r = run_experiment(self._cfg())
        np.testing.assert_allclose(r.improvement, 100 * (r.pse[:, :1] - r.pse) / r.pse[:, :1], atol=1e-12)

    def test_csv_source(self, tmp_path):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(80, 3))
        X[5, 1] = np.nan
        d = Dataset.from_arrays(X, X[:, 0] * 2 + rng.normal(size=80))
        write_csv(d, tmp_path / "d.csv")
        r = run_experiment(ExperimentConfig(source="csv", csv_path=str(tmp_path / "d.csv"),
                                            models=("lasso", "knn"), replications=2, pipeline=FAST))
        assert r.pse.shape == (2, 2) and np.isfinite(r.pse).all()
        assert r.label.endswith("d.csv")

    def test_failure_reports_seed(self, monkeypatch):
        def boom(*a):
            raise RuntimeError("bad draw")
        monkeypatch.setattr(bench, "_fit_models", boom)
        with pytest.raises(ExperimentError) as e:
            run_experiment(self._cfg())
        assert e.value.seed == derive_seed(11, 0) and e.value.replication == 0

    def test_progress(self):
        seen = []
        run_experiment(self._cfg(models=("lasso",)), progress=seen.append)
        assert seen == [0, 1, 2]


class TestDrift:
    def test_report(self):
        P = np.array([[1.0, 2.0, 6.0, 3.0], [2.0, 3.0, 8.0, 5.0], [9.0, 1.0, 7.0, 4.0]])
        r = DriftReport(P, (0, 1, 2))
        assert r.medians == dict(zip(DRIFT_ARMS, [2.0, 2.0, 7.0, 4.0]))
        assert r.gap_closed == pytest.approx(3 / 5)
        assert r.to_csv().splitlines()[0] == "seed,baseline,refit,no_adaptation,attention"
        assert "gap closed: 60.0%" in r.to_text()

    def test_deterministic(self):
        s = DriftScenario(n_train=150, n_test=80)
        a = run_drift_experiment(s, replications=2, seed=3)
        b = run_drift_experiment(s, replications=2, seed=3, threads=2)
        np.testing.assert_array_equal(a.pse, b.pse)
        assert a.pse.shape == (2, 4)

    @pytest.mark.xfail(strict=False, reason="at sigma 36 the arms differ by less than the noise; the corrected "
                                            "model beats the time-2 refit")
    def test_attention_between_refit_and_stale(self):
        m = run_drift_experiment(DriftScenario(), replications=50, seed=0).medians
        assert m["refit"] <= m["attention"] <= m["no_adaptation"]
