"""Regression trees, random forests and squared-error gradient boosting.

All trees of an ensemble are stored in packed ``(num_trees, max_nodes)``
arrays. Each leaf keeps the slice of training rows it was fit on, which is
what proximity-free re-prediction with attention weights needs.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _treekern as K
from .data import DataError, FoldPlan, derive_seed

__all__ = [
    "RegressionTree",
    "TreeEnsemble",
    "forest_fit",
    "gbt_fit",
    "apply",
    "proximity",
    "ensemble_similarity",
    "weighted_leaf_predict",
    "weighted_leaf_predict_matrix",
    "feature_importances",
    "write_similarity_csv",
    "default_threads",
]


def default_threads() -> int:
    """Thread cap from ``ATTNSL_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("ATTNSL_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class RegressionTree:
    """One tree unpacked from an ensemble (read-only view, for inspection).

    Internal nodes have ``split_feature >= 0``; a leaf has
    ``split_feature == -1`` and its ``training_rows`` hold the rows it was
    fit on.
    """

    split_feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    training_rows: tuple

    @property
    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.split_feature < 0)


@dataclass(frozen=True, eq=False)
class TreeEnsemble:
    kind: str
    feat: np.ndarray
    thr: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    gain: np.ndarray
    start: np.ndarray
    end: np.ndarray
    rows: np.ndarray
    fw: np.ndarray
    targets: np.ndarray
    n_nodes: np.ndarray
    n_features: int
    learning_rate: float = 1.0
    init_value: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("forest", "boosted"):
            raise ValueError(f"unknown ensemble kind {self.kind!r}")
        for name in ("feat", "thr", "left", "right", "value", "gain", "start",
                     "end", "rows", "fw", "targets", "n_nodes"):
            a = np.ascontiguousarray(getattr(self, name))
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def num_trees(self) -> int:
        return self.feat.shape[0]

    @property
    def max_nodes(self) -> int:
        return self.feat.shape[1]

    def tree(self, t: int) -> RegressionTree:
        m = int(self.n_nodes[t])
        sl = tuple(
            self.rows[t, self.start[t, i]:self.end[t, i]].copy() if self.feat[t, i] < 0 else None
            for i in range(m)
        )
        return RegressionTree(self.feat[t, :m].copy(), self.thr[t, :m].copy(), self.left[t, :m].copy(),
                              self.right[t, :m].copy(), self.value[t, :m].copy(), sl)

    def truncate(self, num_trees: int) -> "TreeEnsemble":
        """Keep the first ``num_trees`` trees (boosting stages)."""
        if not 1 <= num_trees <= self.num_trees:
            raise ValueError(f"cannot keep {num_trees} of {self.num_trees} trees")
        cut = {name: getattr(self, name)[:num_trees] for name in
               ("feat", "thr", "left", "right", "value", "gain", "start", "end",
                "rows", "fw", "targets", "n_nodes")}
        return TreeEnsemble(self.kind, n_features=self.n_features, learning_rate=self.learning_rate,
                            init_value=self.init_value, seed=self.seed, **cut)

    def _check(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise DataError(f"expected {self.n_features} feature columns, got {X.shape[1]}")
        return X

    def tree_predictions(self, X) -> np.ndarray:
        """Per-tree leaf values, shape (n, num_trees)."""
        L = apply(self, X)
        return np.take_along_axis(self.value.T, L, axis=0) if L.size else np.zeros(L.shape)

    def predict(self, X) -> np.ndarray:
        P = self.tree_predictions(X)
        if self.kind == "forest":
            return P.mean(axis=1)
        return self.init_value + self.learning_rate * P.sum(axis=1)

    def staged_predict(self, X) -> np.ndarray:
        """Boosted predictions after each round, shape (num_trees, n)."""
        P = self.tree_predictions(X)
        return self.init_value + self.learning_rate * np.cumsum(P.T, axis=0)

    # serialization

    def to_dict(self) -> dict:
        trees = []
        for t in range(self.num_trees):
            m = int(self.n_nodes[t])
            used = int(self.end[t, 0])
            trees.append({
                "split_feature": self.feat[t, :m].tolist(),
                "threshold": self.thr[t, :m].tolist(),
                "left": self.left[t, :m].tolist(),
                "right": self.right[t, :m].tolist(),
                "value": self.value[t, :m].tolist(),
                "gain": self.gain[t, :m].tolist(),
                "row_start": self.start[t, :m].tolist(),
                "row_end": self.end[t, :m].tolist(),
                "rows": self.rows[t, :used].tolist(),
                "row_weights": self.fw[t, :used].tolist(),
            })
        if self.kind == "forest":
            targets = self.targets[0].tolist()
        else:
            targets = self.targets.tolist()
        return {"kind": self.kind, "n_features": self.n_features, "num_trees": self.num_trees,
                "learning_rate": self.learning_rate, "init_value": self.init_value,
                "seed": self.seed, "targets": targets, "trees": trees}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "TreeEnsemble":
        trees = d["trees"]
        T = len(trees)
        if T == 0:
            raise DataError("ensemble has no trees")
        M = max(len(tr["split_feature"]) for tr in trees)
        targ = np.asarray(d["targets"], dtype=float)
        n = targ.shape[-1]
        arr = {
            "feat": np.full((T, M), -1, dtype=np.int32),
            "thr": np.zeros((T, M)),
            "left": np.full((T, M), -1, dtype=np.int32),
            "right": np.full((T, M), -1, dtype=np.int32),
            "value": np.zeros((T, M)),
            "gain": np.zeros((T, M)),
            "start": np.zeros((T, M), dtype=np.int32),
            "end": np.zeros((T, M), dtype=np.int32),
            "rows": np.full((T, n), -1, dtype=np.int32),
            "fw": np.zeros((T, n)),
        }
        keys = {"feat": "split_feature", "thr": "threshold", "left": "left", "right": "right",
                "value": "value", "gain": "gain", "start": "row_start", "end": "row_end"}
        nn = np.zeros(T, dtype=np.int32)
        for t, tr in enumerate(trees):
            m = len(tr["split_feature"])
            nn[t] = m
            for k, src in keys.items():
                arr[k][t, :m] = tr[src]
            u = len(tr["rows"])
            arr["rows"][t, :u] = tr["rows"]
            arr["fw"][t, :u] = tr["row_weights"]
        targets = np.broadcast_to(targ, (T, n)) if targ.ndim == 1 else targ
        return cls(d["kind"], targets=targets, n_nodes=nn, n_features=int(d["n_features"]),
                   learning_rate=float(d["learning_rate"]), init_value=float(d["init_value"]),
                   seed=int(d["seed"]), **arr)

    @classmethod
    def from_json(cls, text: str) -> "TreeEnsemble":
        return cls.from_dict(json.loads(text))


def _validate_xy(X, y):
    X = np.ascontiguousarray(X, dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise DataError(f"shape mismatch: X {X.shape}, y {y.shape}")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise DataError("features and response must be finite (impute first)")
    return X, y


def _trim(arrays, n_nodes):
    M = max(1, int(n_nodes.max()))
    return [a[:, :M] for a in arrays]


def forest_fit(X, y, num_trees: int = 500, mtry: int | None = None, min_node_size: int = 5,
               seed: int = 0, *, bootstrap: bool = True, threads: int | None = None) -> TreeEnsemble:
    """Random forest regression.

    Each tree draws ``n`` rows with replacement (bootstrap counts become row
    weights), samples ``mtry`` candidate features per node and splits
    greedily on variance reduction. Nodes holding fewer than
    ``min_node_size`` in-bag draws are not split. Tree ``t`` is seeded with
    ``derive_seed(seed, t)``, so the forest is identical for any
    ``threads`` value.
    """
    X, y = _validate_xy(X, y)
    n, p = X.shape
    if n < 2:
        raise DataError("forest_fit needs at least 2 rows")
    mtry = max(1, p // 3) if mtry is None else int(mtry)
    if not 1 <= mtry <= p:
        raise ValueError(f"mtry must be in [1, {p}], got {mtry}")
    if num_trees < 1:
        raise ValueError("num_trees must be >= 1")
    seeds = np.array([derive_seed(seed, t) for t in range(num_trees)], dtype=np.int64)
    max_nodes = 2 * n
    threads = threads or default_threads()
    chunks = np.array_split(np.arange(num_trees), min(threads, num_trees))

    def run(idx):
        return K.fit_forest(X, y, len(idx), mtry, int(min_node_size), bool(bootstrap),
                            seeds[idx], max_nodes)

    if len(chunks) == 1:
        parts = [run(chunks[0])]
    else:
        with ThreadPoolExecutor(len(chunks)) as ex:
            parts = list(ex.map(run, chunks))
    cat = [np.concatenate(c, axis=0) for c in zip(*parts)]
    feat, thr, left, right, value, gain, start, end, rows, fw, n_nodes, _ = cat
    feat, thr, left, right, value, gain, start, end = _trim(
        [feat, thr, left, right, value, gain, start, end], n_nodes)
    targets = np.broadcast_to(y, (num_trees, n))
    return TreeEnsemble("forest", feat, thr, left, right, value, gain, start, end, rows, fw,
                        targets, n_nodes, p, 1.0, 0.0, int(seed))


def _boost(X, y, w, num_rounds, learning_rate, max_leaves, max_depth, min_leaf, seed):
    n, p = X.shape
    ml = -1 if max_leaves is None else int(max_leaves)
    md = -1 if max_depth is None else int(max_depth)
    max_nodes = 2 * n if ml < 0 else min(2 * n, 2 * ml)
    out = K.fit_boosted(X, y, w, int(num_rounds), float(learning_rate), int(min_leaf), ml, md, max_nodes)
    feat, thr, left, right, value, gain, start, end, rows, fw, n_nodes, _, targets, init = out
    feat, thr, left, right, value, gain, start, end = _trim(
        [feat, thr, left, right, value, gain, start, end], n_nodes)
    return TreeEnsemble("boosted", feat, thr, left, right, value, gain, start, end, rows, fw,
                        targets, n_nodes, p, float(learning_rate), float(init), int(seed))


def _early_stop(curve: np.ndarray, patience: int) -> int:
    """1-based round count at the best error seen before ``patience`` rounds without improvement."""
    best, best_i, since = np.inf, 0, 0
    for i, e in enumerate(curve):
        if e < best:
            best, best_i, since = e, i, 0
        else:
            since += 1
            if since >= patience:
                break
    return best_i + 1


def gbt_fit(X, y, num_rounds: int = 100, learning_rate: float = 0.1, max_leaves: int | None = 8,
            folds: FoldPlan | None = None, seed: int = 0, *, weights=None, max_depth: int | None = None,
            min_leaf: int = 1, patience: int = 20) -> TreeEnsemble:
    """Squared-error gradient boosting with leaf-wise trees.

    Every round fits a tree with at most ``max_leaves`` leaves to the current
    residuals using all features; ``init_value`` is the (weighted) mean of
    ``y``. Observation ``weights`` enter as weighted leaf means and weighted
    variance-reduction splits. With ``folds`` the fold-averaged held-out
    error curve picks the round count (stopping after ``patience`` rounds
    without improvement) and the returned ensemble has that many rounds.
    The fit is deterministic; ``seed`` is recorded only.
    """
    X, y = _validate_xy(X, y)
    n = X.shape[0]
    if num_rounds < 1:
        raise ValueError("num_rounds must be >= 1")
    if not 0 < learning_rate <= 1:
        raise ValueError("learning_rate must lie in (0, 1]")
    w = np.ones(n) if weights is None else np.ascontiguousarray(weights, dtype=float)
    if w.shape != (n,) or (w < 0).any() or not np.isfinite(w).all() or w.sum() <= 0:
        raise DataError("weights must be finite, nonnegative, not all zero, one per row")
    if (w == w[0]).all():
        w = np.ones(n)  # split gains are scale-free; unit weights keep near-ties identical to the unweighted fit
    args = (num_rounds, learning_rate, max_leaves, max_depth, min_leaf, seed)
    if folds is None:
        return _boost(X, y, w, *args)
    curve = np.zeros(num_rounds)
    n_folds = 0
    for tr, te in folds.splits():
        if w[tr].sum() <= 0:
            continue
        ens = _boost(X[tr], y[tr], w[tr], *args)
        stage = ens.staged_predict(X[te])
        wt = w[te]
        denom = wt.sum() if wt.sum() > 0 else len(te)
        curve += ((stage - y[te]) ** 2 * (wt if wt.sum() > 0 else 1.0)).sum(axis=1) / denom
        n_folds += 1
    if n_folds == 0:
        return _boost(X, y, w, *args)
    best = _early_stop(curve / n_folds, patience)
    return _boost(X, y, w, best, *args[1:])


def apply(ensemble: TreeEnsemble, X) -> np.ndarray:
    """Leaf assignment: node id of the leaf each row reaches, shape (n, num_trees)."""
    X = ensemble._check(X)
    return K.apply_trees(X, ensemble.feat, ensemble.thr, ensemble.left, ensemble.right)


def ensemble_similarity(ensemble: TreeEnsemble, A, B) -> np.ndarray:
    """Fraction of trees in which each row of ``A`` and each row of ``B`` share a leaf."""
    LA = apply(ensemble, A)
    LB = apply(ensemble, B)
    return K.co_leaf_fraction(LA, LB, ensemble.max_nodes)


def proximity(ensemble: TreeEnsemble, A, B) -> np.ndarray:
    """Random-forest proximity; all points are routed, in-bag or not."""
    if ensemble.kind != "forest":
        raise ValueError("proximity requires a forest; use ensemble_similarity for boosted models")
    return ensemble_similarity(ensemble, A, B)


def weighted_leaf_predict_matrix(ensemble: TreeEnsemble, X_star, attn) -> np.ndarray:
    """Attention re-prediction for many test rows; ``attn`` is (n_test, n_train).

    Each tree's leaf value is replaced by the mean of the targets the tree
    was fit on (``y`` for forests, stage residuals for boosting) over the
    leaf's training rows, weighted by attention times the stored row weight.
    A leaf with zero attention mass keeps its fitted value.
    """
    X_star = ensemble._check(X_star)
    A = np.ascontiguousarray(attn, dtype=float)
    if A.ndim == 1:
        A = A[None, :]
    n_train = ensemble.targets.shape[1]
    if A.shape != (X_star.shape[0], n_train):
        raise DataError(f"attention shape {A.shape} does not match ({X_star.shape[0]}, {n_train})")
    L = apply(ensemble, X_star)
    V = K.weighted_leaf_values(L, A, ensemble.value, ensemble.start, ensemble.end,
                               ensemble.rows, ensemble.fw, np.ascontiguousarray(ensemble.targets))
    if ensemble.kind == "forest":
        return V.mean(axis=1)
    return ensemble.init_value + ensemble.learning_rate * V.sum(axis=1)


def weighted_leaf_predict(ensemble: TreeEnsemble, x_star, attn) -> float:
    """Single-row form of :func:`weighted_leaf_predict_matrix`."""
    return float(weighted_leaf_predict_matrix(ensemble, np.atleast_2d(x_star), np.atleast_2d(attn))[0])


def feature_importances(ensemble: TreeEnsemble, normalize: bool = True) -> np.ndarray:
    """Total split gain (weighted variance reduction) per feature."""
    imp = np.zeros(ensemble.n_features)
    mask = ensemble.feat >= 0
    np.add.at(imp, ensemble.feat[mask], ensemble.gain[mask])
    if normalize:
        s = imp.sum()
        if s > 0:
            imp /= s
    return imp


def write_similarity_csv(S, path, a_ids=None, b_ids=None) -> None:
    """Long-format similarity export: ``test_row_id,train_row_id,weight``."""
    S = np.asarray(S, dtype=float)
    a_ids = a_ids if a_ids is not None else [str(i) for i in range(S.shape[0])]
    b_ids = b_ids if b_ids is not None else [str(j) for j in range(S.shape[1])]
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write("test_row_id,train_row_id,weight\n")
        for i, a in enumerate(a_ids):
            fh.writelines(f"{a},{b},{float(S[i, j])!r}\n" for j, b in enumerate(b_ids))
