import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from attnsl.data import Dataset
from attnsl.interpret import (ClusterAssignment, CoefficientMatrix, blended_coefficients, cluster_importances,
                              cluster_summary, cut_clusters, protoclust, summarize_clusters, write_dendrogram_json,
                              write_heatmap_csv, write_summary_csv)
from attnsl.pipeline import PipelineConfig, fit_predict_attention_lasso, fit_predict_attention_sl, run_pipeline
from attnsl.simgen import SimSetting, gen_setting


def minimax_oracle(P):
    """Exhaustive minimax agglomeration: every pair, every candidate prototype, every step.

    Returns [(members of merged cluster, height, prototype)] and the cluster list after each step.
    """
    clusters = [[i] for i in range(len(P))]
    steps, history = [], [[list(c) for c in clusters]]
    while len(clusters) > 1:
        best = None
        for a in range(len(clusters)):
            for b in range(a + 1, len(clusters)):
                union = sorted(clusters[a] + clusters[b])
                for c in union:
                    r = max(math.dist(P[c], P[x]) for x in union)
                    if best is None or r < best[0]:
                        best = (r, a, b, c)
        r, a, b, c = best
        merged = sorted(clusters[a] + clusters[b])
        clusters = [g for k, g in enumerate(clusters) if k not in (a, b)] + [merged]
        clusters.sort(key=lambda g: g[0])
        steps.append((merged, r, c))
        history.append([list(g) for g in clusters])
    return steps, history


def _result_with(y_base, y_blend, base, attn, m):
    class R:
        pass
    r = R()
    r.y_base, r.y_blend = np.asarray(y_base), np.asarray(y_blend)
    r.base_coefficients, r.attn_coefficients = np.asarray(base), np.asarray(attn)
    r.blended_coefficients = (1 - m) * r.base_coefficients + m * r.attn_coefficients
    r.feature_names = tuple(f"x{j + 1}" for j in range(len(base) - 1))
    return r


def _hetero(seed, n=80, n_test=10, p=4):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n + n_test, p))
    y = np.where(X[:, 0] > 0, 2.0, -2.0) * X[:, 1] + 0.3 * rng.normal(size=n + n_test)
    return Dataset.from_arrays(X[:n], y[:n]), X[n:], y[n:]


class TestBlendedCoefficients:
    @pytest.mark.parametrize("m", [0.0, 1.0])
    def test_endpoints(self, m):
        train, Xt, _ = _hetero(0)
        r = fit_predict_attention_lasso(train, Xt, PipelineConfig(mixing=m, num_trees=30, cv_folds=4))
        C = blended_coefficients(r, row_ids=[f"r{i}" for i in range(len(Xt))])
        expect = r.attn_coefficients if m == 1 else np.tile(r.base_coefficients, (len(Xt), 1))
        np.testing.assert_array_equal(C.values, expect)
        assert C.columns == ("intercept", "x1", "x2", "x3", "x4") and C.row_ids[1] == "r1"

    def test_hand_built(self):
        base = np.array([1.0, 2.0, 0.0])
        attn = np.array([[0.0, 1.0, -1.0], [2.0, 2.0, 4.0]])
        r = _result_with([0, 0], [0, 0], base, attn, 0.4)
        C = blended_coefficients(r)
        np.testing.assert_allclose(C.values, [[0.6, 1.6, -0.4], [1.4, 2.0, 1.6]], atol=1e-12)

    def test_tree_result_rejected(self):
        train, Xt, _ = _hetero(1)
        r = fit_predict_attention_sl(train, Xt[:2], PipelineConfig(mixing=1.0, num_trees=20, cv_folds=3,
                                                                   gbt_rounds=10))
        with pytest.raises(ValueError):
            blended_coefficients(r)

    def test_matrix_validation(self):
        with pytest.raises(ValueError):
            CoefficientMatrix(np.array([[1.0, np.nan]]))
        with pytest.raises(ValueError):
            CoefficientMatrix(np.ones((2, 3)), ("a",))


class TestProtoclust:
    def test_identical_pair(self):
        d = protoclust(np.zeros((2, 3)))
        assert len(d.merges) == 1 and d.merges[0].height == 0.0

    def test_two_points(self):
        d = protoclust(np.array([[0.0], [1.0]]))
        assert d.merges[0].height == 1.0 and d.merges[0].prototype == 0

    def test_errors(self):
        with pytest.raises(ValueError):
            protoclust(np.zeros((1, 2)))
        with pytest.raises(ValueError):
            protoclust(np.array([[0.0], [np.inf]]))
        with pytest.raises(ValueError):
            protoclust(np.zeros((3, 2)), distance="manhattan")

    def test_line_example(self):
        d = protoclust(np.array([[0.0], [1.0], [5.0], [6.5]]))
        assert [m.height for m in d.merges] == [1.0, 1.5, 5.0]
        assert [m.prototype for m in d.merges] == [0, 2, 2]  # 5.0 covers {0, 1, 6.5} within 5

    @pytest.mark.parametrize("seed", range(100))
    def test_exhaustive_oracle(self, seed):
        P = np.random.default_rng(seed).normal(size=(8, 3))
        d = protoclust(P)
        steps, history = minimax_oracle(P)
        for m, (members, h, c) in zip(d.merges, steps):
            np.testing.assert_array_equal(d.members(d.n + d.merges.index(m)), members)
            assert m.height == pytest.approx(h, abs=1e-12)
            assert m.prototype == c
        a = cut_clusters(d, 3)
        assert sorted(a.members(k).tolist() for k in range(3)) == history[8 - 3]

    @given(st.integers(0, 10**6), st.integers(2, 12))
    def test_radius_and_membership(self, seed, n):
        P = np.random.default_rng(seed).normal(size=(n, 2))
        d = protoclust(P)
        for t, m in enumerate(d.merges):
            mem = d.members(n + t)
            assert m.prototype in mem and m.size == len(mem)
            radius = lambda c: max(math.dist(P[c], P[x]) for x in mem)
            assert radius(m.prototype) == pytest.approx(m.height, abs=1e-12)
            assert m.height <= min(radius(c) for c in mem) + 1e-12

    def test_leaf_order_is_permutation(self, rng):
        d = protoclust(rng.normal(size=(15, 2)))
        assert sorted(d.order) == list(range(15))

    def test_inversions_flagged(self, rng):
        d = protoclust(rng.normal(size=(30, 2)))
        h = d.heights
        assert list(d.inversions) == [t for t in range(1, len(h)) if h[t] < h[t - 1]]


class TestCutClusters:
    def test_extremes(self, rng):
        P = rng.normal(size=(6, 2))
        d = protoclust(P)
        one = cut_clusters(d, 1)
        assert one.k == 1 and (one.labels == 0).all() and one.prototypes[0] == d.merges[-1].prototype
        single = cut_clusters(d, 6)
        np.testing.assert_array_equal(single.labels, np.arange(6))
        np.testing.assert_array_equal(single.prototypes, np.arange(6))

    def test_range(self, rng):
        d = protoclust(rng.normal(size=(4, 2)))
        for K in (0, 5):
            with pytest.raises(ValueError):
                cut_clusters(d, K)

    @given(st.integers(0, 10**6), st.integers(3, 15))
    def test_cut_consistency(self, seed, n):
        d = protoclust(np.random.default_rng(seed).normal(size=(n, 2)))
        for K in range(n, 1, -1):
            fine, coarse = cut_clusters(d, K), cut_clusters(d, K - 1)
            groups = {frozenset(fine.members(k).tolist()) for k in range(K)}
            merged = {frozenset(coarse.members(k).tolist()) for k in range(K - 1)}
            new = merged - groups
            assert len(new) == 1 and len(groups - merged) == 2
            assert frozenset().union(*(groups - merged)) == next(iter(new))
            for k in range(K):
                assert fine.prototypes[k] in fine.members(k)


class TestSummaries:
    def test_single_cluster(self):
        y, yb, yf = np.array([1.0, 2, 3]), np.array([1.5, 2, 2]), np.array([1.0, 2.5, 3])
        a = ClusterAssignment(np.zeros(3, dtype=int), np.array([1]), np.array([4]))
        s = summarize_clusters(a, np.eye(3), y, yb, yf, ["a", "b", "c"])
        assert len(s) == 1 and s[0].size == 3 and s[0].prototype_row_id == "b"
        assert s[0].pse_base == pytest.approx(np.mean((y - yb) ** 2))
        assert s[0].pse_blend == pytest.approx(np.mean((y - yf) ** 2))
        np.testing.assert_allclose(s[0].mean_coefficients, 1 / 3)

    def test_singletons(self):
        y, yb, yf = np.array([1.0, 2, 3]), np.array([0.0, 2, 5]), np.array([1.0, 1, 3])
        a = ClusterAssignment(np.arange(3), np.arange(3), np.arange(3))
        s = summarize_clusters(a, np.zeros((3, 2)), y, yb, yf)
        assert [x.pse_base for x in s] == [1.0, 0.0, 4.0] and [x.pse_blend for x in s] == [0.0, 1.0, 0.0]
        assert sum(x.size for x in s) == 3

    def test_missing_response(self):
        a = ClusterAssignment(np.zeros(2, dtype=int), np.array([0]), np.array([2]))
        s = summarize_clusters(a, np.zeros((2, 2)), None, np.zeros(2), np.zeros(2))
        assert np.isnan(s[0].pse_base)

    def test_from_pipeline(self):
        train, Xt, yt = _hetero(2, n_test=12)
        r = run_pipeline(train, Xt, PipelineConfig(mixing=0.5, num_trees=30, cv_folds=4))
        C = blended_coefficients(r)
        a = cut_clusters(protoclust(C.values), 3)
        s = cluster_summary(a, r, yt)
        assert sum(x.size for x in s) == 12
        for x in s:
            idx = a.members(x.cluster)
            np.testing.assert_allclose(x.mean_coefficients, C.values[idx].mean(axis=0), atol=1e-14)
            assert x.pse_blend == pytest.approx(np.mean((yt[idx] - r.y_blend[idx]) ** 2))
        with pytest.raises(ValueError):
            cluster_summary(a, r, None)

    @pytest.mark.xfail(strict=False, reason="with raw proximity at temperature 1 the per-point lassos stay "
                                            "close to the pooled fit, so cluster means are pulled toward it")
    def test_group_coefficients_recovered(self):
        train, test, truth = gen_setting(SimSetting(3, n=400, seed=0))
        r = run_pipeline(train, test.features, PipelineConfig(mixing=1.0))
        C = blended_coefficients(r)
        a = cut_clusters(protoclust(C.values), 2)
        for k in range(2):
            idx = a.members(k)
            g = np.round(truth.latent_test[idx].mean())
            beta = truth.coef_test[np.flatnonzero(truth.latent_test == g)[0]]
            assert np.linalg.norm(C.values[idx].mean(axis=0)[1:] - beta) < 0.5


class TestImportances:
    def _run(self, seed, p=6):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(110, p))
        y = 2 * X[:, 0] + X[:, 1] ** 2 + np.sin(2 * X[:, 2]) + 0.3 * rng.normal(size=110)
        train = Dataset.from_arrays(X[:100], y[:100])
        cfg = PipelineConfig(mixing=1.0, num_trees=30, cv_folds=3, gbt_rounds=20, seed=seed)
        return fit_predict_attention_sl(train, X[100:105], cfg)

    def test_rows_normalized(self):
        r = self._run(0)
        np.testing.assert_allclose(r.importances.sum(axis=1), 1.0, atol=1e-10)
        ic = cluster_importances(r, K=2)
        assert ic.assignment.k == 2 and ic.cluster_means.shape == (2, 6)

    def test_single_feature(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(60, 1))
        train = Dataset.from_arrays(X[:50], np.sin(2 * X[:50, 0]))
        r = fit_predict_attention_sl(train, X[50:], PipelineConfig(mixing=1.0, num_trees=20, cv_folds=3,
                                                                  gbt_rounds=10))
        np.testing.assert_array_equal(r.importances, 1.0)

    def test_noise_below_signal(self):
        wins = 0
        for seed in range(100):
            imp = self._run(seed).importances
            wins += imp[:, 3:].mean() < imp[:, :3].mean()
        assert wins >= 95

    def test_approximate_rejected(self):
        train, Xt, _ = _hetero(3)
        r = run_pipeline(train, Xt, PipelineConfig(base_learner="gbt", approximate=True, mixing=1.0,
                                                   num_trees=20, cv_folds=3))
        with pytest.raises(ValueError):
            cluster_importances(r)


class TestExports:
    def test_files(self, tmp_path, rng):
        V = rng.normal(size=(5, 3))
        d = protoclust(V)
        a = cut_clusters(d, 2)
        ids = [f"p{i}" for i in range(5)]
        write_heatmap_csv(tmp_path / "h.csv", V, a, d, ("intercept", "x1", "x2"), ids)
        rows = list(csv.DictReader(open(tmp_path / "h.csv")))
        assert list(rows[0]) == ["cluster", "row_id", "feature", "value"] and len(rows) == 15
        assert [r["row_id"] for r in rows[::3]] == [ids[i] for i in d.order]
        first = d.order[0]
        assert float(rows[1]["value"]) == V[first, 1] and int(rows[0]["cluster"]) == a.labels[first]

        write_dendrogram_json(tmp_path / "d.json", d, ids)
        j = json.loads((tmp_path / "d.json").read_text())
        assert j["heights"] == d.heights.tolist() and j["row_ids"] == ids and len(j["merges"]) == 4

        s = summarize_clusters(a, V, np.zeros(5), np.ones(5), np.zeros(5), ids)
        write_summary_csv(tmp_path / "s.csv", s, ("intercept", "x1", "x2"))
        rows = list(csv.DictReader(open(tmp_path / "s.csv")))
        assert list(rows[0])[:5] == ["cluster", "size", "prototype_row_id", "pse_base", "pse_blend"]
        assert sum(int(r["size"]) for r in rows) == 5 and float(rows[0]["pse_base"]) == 1.0
