"""Attention pipelines: per-test-point weighted fits blended with a global model.

For every test row the training rows are weighted by that row's attention
weights (softmax of supervised similarity), a weighted model is fit and its
prediction is blended with the global baseline::

    y_blend = (1 - m) * y_base + m * y_attn

The mixing value ``m`` is fixed by the caller or chosen by cross-validation
on stored fold predictions, either once for all rows or per test row.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .attention import (AttentionMatrix, attention_from_forest, attention_from_ridge, fit_diagonal_attention,
                        softmax_rows, write_attention_csv)
from .data import DataError, Dataset, FoldPlan, make_folds, derive_seed
from .linear import LinearModel, lasso_cv, weighted_lasso_fit
from .trees import (TreeEnsemble, ensemble_similarity, feature_importances, forest_fit, gbt_fit,
                    weighted_leaf_predict_matrix)

__all__ = [
    "PipelineConfig",
    "MixingParameter",
    "PipelineResult",
    "MixingCV",
    "fit_predict_attention_lasso",
    "fit_predict_attention_sl",
    "approximate_attention_predict",
    "select_mixing_cv",
    "drift_correct",
    "run_pipeline",
    "write_predictions_csv",
    "write_coefficients_csv",
]

DEFAULT_M_GRID = tuple(round(0.1 * k, 1) for k in range(11))


@dataclass(frozen=True)
class PipelineConfig:
    """Settings shared by every attention pipeline.

    ``mixing`` fixes m and skips cross-validation. ``similarity`` picks the
    attention scores: forest proximity or the ridge-diagonal inner product.
    ``fold_kind`` is ``k-fold`` or ``expanding-window`` (time-ordered rows).
    """

    base_learner: str = "lasso"
    similarity: str = "forest"
    num_trees: int = 500
    mtry: int | None = None
    min_node_size: int = 5
    temperature: float = 1.0
    m_grid: tuple = DEFAULT_M_GRID
    cv_folds: int = 10
    fold_kind: str = "k-fold"
    seed: int = 0
    adaptive: bool = False
    approximate: bool = False
    mixing: float | None = None
    gbt_rounds: int = 100
    gbt_learning_rate: float = 0.1
    gbt_max_leaves: int = 8
    gbt_patience: int = 20
    drift_temperature: float = 0.1
    threads: int = 1

    def __post_init__(self):
        object.__setattr__(self, "m_grid", tuple(float(m) for m in self.m_grid))
        self.validate()

    def validate(self) -> None:
        if self.base_learner not in ("lasso", "gbt", "forest"):
            raise ValueError(f"base_learner must be lasso, gbt or forest, got {self.base_learner!r}")
        if self.base_learner == "forest" and not self.approximate:
            raise ValueError("base_learner 'forest' is only available with approximate=True")
        if self.similarity not in ("forest", "ridge"):
            raise ValueError(f"similarity must be forest or ridge, got {self.similarity!r}")
        if not self.temperature > 0 or not self.drift_temperature > 0:
            raise ValueError("temperatures must be positive")
        g = np.asarray(self.m_grid)
        if g.size == 0 or (g < 0).any() or (g > 1).any() or 0.0 not in g or 1.0 not in g:
            raise ValueError("m_grid must lie in [0, 1] and contain 0 and 1")
        if self.cv_folds < 2:
            raise ValueError("cv_folds must be >= 2")
        if self.fold_kind not in ("k-fold", "expanding-window"):
            raise ValueError(f"fold_kind must be k-fold or expanding-window, got {self.fold_kind!r}")
        if self.mixing is not None and not 0 <= self.mixing <= 1:
            raise ValueError("mixing must lie in [0, 1]")
        if self.num_trees < 1 or self.gbt_rounds < 1 or self.threads < 1:
            raise ValueError("num_trees, gbt_rounds and threads must be >= 1")
        if not 0 < self.gbt_learning_rate <= 1:
            raise ValueError("gbt_learning_rate must lie in (0, 1]")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["m_grid"] = list(self.m_grid)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown pipeline config keys: {unknown}")
        return cls(**d)


@dataclass(frozen=True, eq=False)
class MixingParameter:
    value: float
    mode: str = "global"
    per_point_values: np.ndarray | None = None

    def __post_init__(self):
        if self.mode not in ("global", "adaptive"):
            raise ValueError(f"unknown mixing mode {self.mode!r}")
        if not 0 <= self.value <= 1:
            raise ValueError("mixing value must lie in [0, 1]")
        if self.mode == "adaptive":
            if self.per_point_values is None:
                raise ValueError("adaptive mixing needs per-point values")
            v = np.asarray(self.per_point_values, dtype=float)
            if (v < 0).any() or (v > 1).any():
                raise ValueError("per-point mixing values must lie in [0, 1]")
            object.__setattr__(self, "per_point_values", v)

    def weights(self, n: int) -> np.ndarray:
        """Mixing value per test row."""
        if self.mode == "adaptive":
            return self.per_point_values
        return np.full(n, self.value)

    def to_dict(self) -> dict:
        d = {"value": self.value, "mode": self.mode}
        if self.per_point_values is not None:
            d["per_point_values"] = self.per_point_values.tolist()
        return d


@dataclass(frozen=True, eq=False)
class MixingCV:
    """Stored cross-validation predictions and the errors they imply.

    ``errors`` is the fold-mean MSE per grid value; ``sq_errors`` holds the
    squared error of every evaluated row at every grid value.
    """

    m_grid: np.ndarray
    rows: np.ndarray
    y: np.ndarray
    y_base: np.ndarray
    y_attn: np.ndarray
    fold: np.ndarray
    errors: np.ndarray
    sq_errors: np.ndarray
    n_weighted_fits: int


@dataclass(frozen=True, eq=False)
class PipelineResult:
    y_base: np.ndarray
    y_attn: np.ndarray
    y_blend: np.ndarray
    mixing: MixingParameter
    attention: AttentionMatrix
    config: PipelineConfig
    lambda_hat: float | None = None
    base_coefficients: np.ndarray | None = None
    attn_coefficients: np.ndarray | None = None
    importances: np.ndarray | None = None
    baseline: LinearModel | TreeEnsemble | None = None
    n_rounds: int | None = None
    feature_names: tuple = ()
    cv: MixingCV | None = None

    @property
    def blended_coefficients(self) -> np.ndarray:
        """(n_test, p + 1) intercept-first coefficients of the blended linear models."""
        if self.attn_coefficients is None:
            raise ValueError("blended coefficients exist only for lasso pipelines")
        m = self.mixing.weights(len(self.y_base))[:, None]
        return (1.0 - m) * self.base_coefficients[None, :] + m * self.attn_coefficients


def _blend(y_base, y_attn, m):
    return (1.0 - m) * y_base + m * y_attn


def _map(fn, n: int, threads: int) -> list:
    """Apply ``fn`` to ``range(n)``; results are returned in index order."""
    if threads <= 1 or n <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(min(threads, n)) as ex:
        return list(ex.map(fn, range(n)))


def _as_xy(train):
    if isinstance(train, Dataset):
        return np.asarray(train.features), np.asarray(train.response), train.feature_names
    X, y = train
    X = np.asarray(X, dtype=float)
    return X, np.asarray(y, dtype=float), tuple(f"x{j + 1}" for j in range(X.shape[1]))


def _check_inputs(X, y, X_test):
    X_test = np.atleast_2d(np.asarray(X_test, dtype=float))
    if X_test.shape[0] == 0:
        raise DataError("no test rows")
    if X_test.shape[1] != X.shape[1]:
        raise DataError(f"test data has {X_test.shape[1]} columns, train has {X.shape[1]}")
    if np.isnan(X).any() or np.isnan(X_test).any() or np.isnan(y).any():
        raise DataError("inputs contain missing values; impute first")
    return X_test


def _folds(n: int, config: PipelineConfig, key: int) -> FoldPlan:
    return make_folds(n, config.fold_kind, min(config.cv_folds, n), derive_seed(config.seed, key))


def _attention(X_sim, y, X_sim_test, config: PipelineConfig) -> AttentionMatrix:
    if config.similarity == "ridge":
        att = fit_diagonal_attention(X_sim, y, seed=derive_seed(config.seed, 3))
        return attention_from_ridge(att, X_sim_test, X_sim, config.temperature)
    forest = forest_fit(X_sim, y, config.num_trees, config.mtry, config.min_node_size,
                        derive_seed(config.seed, 4), threads=config.threads)
    return attention_from_forest(forest, X_sim_test, X_sim, config.temperature)


# --------------------------------------------------------------------------
# one pass of a pipeline: baseline + per-point models, no mixing
# --------------------------------------------------------------------------

@dataclass
class _Stage:
    y_base: np.ndarray
    y_attn: np.ndarray
    attention: AttentionMatrix
    lambda_hat: float | None = None
    base_coef: np.ndarray | None = None
    attn_coef: np.ndarray | None = None
    importances: np.ndarray | None = None
    baseline: object = None
    n_rounds: int | None = None
    n_weighted_fits: int = 0


def _stage_lasso(X, y, Xq, A, config, names) -> _Stage:
    base, lam = lasso_cv(X, y, _folds(len(y), config, 1), feature_names=names)
    W = A.weights

    def one(i):
        return weighted_lasso_fit(X, y, W[i], lam, warm_start=base)

    models = _map(one, Xq.shape[0], config.threads)
    coef = np.array([np.r_[mdl.intercept, mdl.coefficients] for mdl in models])
    y_attn = coef[:, 0] + np.einsum("ij,ij->i", Xq, coef[:, 1:])
    return _Stage(base.predict(Xq), y_attn, A, lam, np.r_[base.intercept, base.coefficients], coef,
                  baseline=base, n_weighted_fits=len(models))


def _baseline_gbt(X, y, config) -> TreeEnsemble:
    return gbt_fit(X, y, config.gbt_rounds, config.gbt_learning_rate, config.gbt_max_leaves,
                   folds=_folds(len(y), config, 1), seed=config.seed, patience=config.gbt_patience)


def _stage_gbt(X, y, Xq, A, config) -> _Stage:
    base = _baseline_gbt(X, y, config)
    rounds = base.num_trees
    W = A.weights

    def one(i):
        ens = gbt_fit(X, y, rounds, config.gbt_learning_rate, config.gbt_max_leaves,
                      seed=config.seed, weights=W[i])
        return ens.predict(Xq[i:i + 1])[0], feature_importances(ens)

    out = _map(one, Xq.shape[0], config.threads)
    y_attn = np.array([o[0] for o in out])
    imp = np.array([o[1] for o in out])
    return _Stage(base.predict(Xq), y_attn, A, importances=imp, baseline=base, n_rounds=rounds,
                  n_weighted_fits=len(out))


def _stage_approx(X, y, Xq, A, config) -> _Stage:
    if config.base_learner == "forest":
        base = forest_fit(X, y, config.num_trees, config.mtry, config.min_node_size,
                          derive_seed(config.seed, 5), threads=config.threads)
    else:
        base = _baseline_gbt(X, y, config)
    y_attn = weighted_leaf_predict_matrix(base, Xq, A.weights)
    return _Stage(base.predict(Xq), y_attn, A, baseline=base, n_rounds=base.num_trees)


def _stage(X, y, Xq, S, Sq, config, names=()) -> _Stage:
    A = _attention(S, y, Sq, config)
    if config.approximate:
        return _stage_approx(X, y, Xq, A, config)
    if config.base_learner == "gbt":
        return _stage_gbt(X, y, Xq, A, config)
    return _stage_lasso(X, y, Xq, A, config, names)


# --------------------------------------------------------------------------
# mixing selection
# --------------------------------------------------------------------------

def _argmin_first(err: np.ndarray, axis=-1) -> np.ndarray:
    """Index of the smallest value; near-ties (relative 1e-12) go to the lowest index."""
    lo = err.min(axis=axis, keepdims=True)
    ok = err <= lo + 1e-12 * np.abs(lo) + 1e-300
    return np.argmax(ok, axis=axis)


def cross_validate_stages(X, y, config: PipelineConfig, S=None) -> MixingCV:
    """Run the full pipeline once per fold and store held-out predictions."""
    S = X if S is None else S
    plan = _folds(len(y), config, 2)
    rows, yb, ya, fold = [], [], [], []
    n_fits = 0
    for k, (tr, te) in enumerate(plan.splits()):
        cfg = replace(config, seed=derive_seed(config.seed, 20, k), mixing=None)
        st = _stage(X[tr], y[tr], X[te], S[tr], S[te], cfg)
        rows.append(te)
        yb.append(st.y_base)
        ya.append(st.y_attn)
        fold.append(np.full(len(te), k))
        n_fits += st.n_weighted_fits
    rows = np.concatenate(rows)
    yb = np.concatenate(yb)
    ya = np.concatenate(ya)
    fold = np.concatenate(fold)
    grid = np.asarray(config.m_grid)
    pred = _blend(yb[:, None], ya[:, None], grid[None, :])
    sq = (pred - y[rows][:, None]) ** 2
    folds_used = np.unique(fold)
    errors = np.mean([sq[fold == k].mean(axis=0) for k in folds_used], axis=0)
    return MixingCV(grid, rows, y[rows], yb, ya, fold, errors, sq, n_fits)


def _mixing_from_cv(cv: MixingCV, attention: AttentionMatrix | None, adaptive: bool) -> MixingParameter:
    grid = cv.m_grid
    m_global = float(grid[_argmin_first(cv.errors)])
    if not adaptive:
        return MixingParameter(m_global, "global")
    # attention of each target over the evaluated CV rows, renormalized
    Wt = attention.weights[:, cv.rows]
    E = (Wt @ cv.sq_errors) / (Wt.sum(axis=1, keepdims=True) + 1e-12)
    per = grid[_argmin_first(E, axis=1)]
    return MixingParameter(m_global, "adaptive", per)


def select_mixing_cv(train, config: PipelineConfig, attention: AttentionMatrix | None = None,
                     similarity_features=None) -> MixingParameter:
    """Cross-validated mixing value.

    Each fold runs the whole pipeline on the other folds and stores the
    baseline and attention predictions for its held-out rows; every grid
    value is then scored on those stored predictions without refitting.
    Global mode minimizes the fold-mean squared error, adaptive mode
    minimizes each target's attention-weighted squared error (``attention``
    rows index the training rows). Ties go to the smallest m.
    """
    X, y, _ = _as_xy(train)
    if config.adaptive and attention is None:
        raise ValueError("adaptive mixing needs the targets' attention rows")
    cv = cross_validate_stages(X, y, config, similarity_features)
    return _mixing_from_cv(cv, attention, config.adaptive)


# --------------------------------------------------------------------------
# public pipelines
# --------------------------------------------------------------------------

def run_pipeline(train, X_test, config: PipelineConfig, *, similarity_train=None,
                 similarity_test=None) -> PipelineResult:
    """Run whichever pipeline ``config`` describes.

    ``similarity_train`` / ``similarity_test`` optionally supply separate
    features for the attention scores (e.g. lagged context) while the
    models themselves use ``train`` and ``X_test``.
    """
    X, y, names = _as_xy(train)
    Xq = _check_inputs(X, y, X_test)
    if (similarity_train is None) != (similarity_test is None):
        raise ValueError("give both similarity_train and similarity_test or neither")
    S = X if similarity_train is None else np.asarray(similarity_train, dtype=float)
    Sq = Xq if similarity_test is None else np.atleast_2d(np.asarray(similarity_test, dtype=float))
    if S.shape[0] != X.shape[0] or Sq.shape[0] != Xq.shape[0] or S.shape[1] != Sq.shape[1]:
        raise DataError("similarity features do not line up with the model features")

    st = _stage(X, y, Xq, S, Sq, config, names)
    cv = None
    if config.mixing is not None:
        mixing = MixingParameter(float(config.mixing), "global")
    else:
        cv = cross_validate_stages(X, y, config, S)
        mixing = _mixing_from_cv(cv, st.attention, config.adaptive)
    y_blend = _blend(st.y_base, st.y_attn, mixing.weights(len(st.y_base)))
    return PipelineResult(st.y_base, st.y_attn, y_blend, mixing, st.attention, config, st.lambda_hat,
                          st.base_coef, st.attn_coef, st.importances, st.baseline, st.n_rounds,
                          tuple(names), cv)


def fit_predict_attention_lasso(train, X_test, config: PipelineConfig | None = None, **kw) -> PipelineResult:
    """Attention lasso: one weighted lasso per test row at the baseline's CV penalty."""
    config = config or PipelineConfig()
    if config.base_learner != "lasso" or config.approximate:
        config = replace(config, base_learner="lasso", approximate=False)
    return run_pipeline(train, X_test, config, **kw)


def fit_predict_attention_sl(train, X_test, config: PipelineConfig | None = None, **kw) -> PipelineResult:
    """Attention with boosted trees: one weighted boosting fit per test row.

    The baseline's CV-selected round count is reused by every per-row fit.
    """
    config = replace(config or PipelineConfig(), base_learner="gbt", approximate=False)
    return run_pipeline(train, X_test, config, **kw)


def approximate_attention_predict(train, X_test, config: PipelineConfig | None = None, **kw) -> PipelineResult:
    """Reweight the leaves of one fitted ensemble instead of refitting per row."""
    config = config or PipelineConfig(base_learner="gbt", approximate=True)
    if config.base_learner not in ("gbt", "forest"):
        raise ValueError("approximate attention needs a tree base learner (gbt or forest)")
    return run_pipeline(train, X_test, replace(config, approximate=True), **kw)


def drift_correct(model: TreeEnsemble, X2, y2, X3, temperature: float = 0.1,
                  return_correction: bool = False):
    """Correct a stale tree model with attention-weighted recent residuals.

    Attention from each row of ``X3`` to the recent rows ``X2`` is the
    softmax of tree co-occurrence similarity; the returned predictions are
    ``model(X3) + A @ (y2 - model(X2))``.
    """
    X2 = np.atleast_2d(np.asarray(X2, dtype=float))
    y2 = np.asarray(y2, dtype=float)
    if X2.shape[0] == 0:
        raise DataError("no recent rows to estimate residuals from")
    if y2.shape != (X2.shape[0],):
        raise DataError("recent response length does not match recent rows")
    A = softmax_rows(ensemble_similarity(model, X3, X2), temperature).weights
    r2 = y2 - model.predict(X2)
    corr = A @ r2
    pred = model.predict(X3) + corr
    return (pred, corr) if return_correction else pred


# --------------------------------------------------------------------------
# exports
# --------------------------------------------------------------------------

def write_predictions_csv(result: PipelineResult, path, row_ids=None, y_test=None) -> None:
    n = len(result.y_base)
    row_ids = row_ids if row_ids is not None else [str(i) for i in range(n)]
    m = result.mixing.weights(n)
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write("row_id,y_base,y_attn,y_blend,m" + (",y" if y_test is not None else "") + "\n")
        for i in range(n):
            cells = [row_ids[i], repr(float(result.y_base[i])), repr(float(result.y_attn[i])),
                     repr(float(result.y_blend[i])), repr(float(m[i]))]
            if y_test is not None:
                cells.append(repr(float(y_test[i])))
            fh.write(",".join(cells) + "\n")


def write_coefficients_csv(result: PipelineResult, path, row_ids=None) -> None:
    """Blended coefficients, one row per test row: ``test_row_id,intercept,<features>``."""
    B = result.blended_coefficients
    row_ids = row_ids if row_ids is not None else [str(i) for i in range(B.shape[0])]
    names = list(result.feature_names) or [f"x{j + 1}" for j in range(B.shape[1] - 1)]
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(",".join(["test_row_id", "intercept", *names]) + "\n")
        for i in range(B.shape[0]):
            fh.write(",".join([row_ids[i], *(repr(float(v)) for v in B[i])]) + "\n")


def export_result(result: PipelineResult, outdir, row_ids=None, train_ids=None, y_test=None) -> list[Path]:
    """Write predictions, coefficients (lasso only) and attention CSVs into ``outdir``."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "predictions.csv", out / "attention.csv"]
    write_predictions_csv(result, paths[0], row_ids, y_test)
    write_attention_csv(result.attention, paths[1], row_ids, train_ids)
    if result.attn_coefficients is not None:
        paths.append(out / "coefficients.csv")
        write_coefficients_csv(result, paths[-1], row_ids)
    return paths


def result_model_dict(result: PipelineResult) -> dict:
    """JSON-ready description of a fitted pipeline (config, penalty, mixing, baseline)."""
    base = result.baseline.to_dict() if result.baseline is not None else None
    config = result.config.to_dict()
    del config["threads"]  # results do not depend on it; keeps the file thread-independent
    return {"pipeline": {"config": config, "lambda_hat": result.lambda_hat,
                         "n_rounds": result.n_rounds, "mixing": result.mixing.to_dict(),
                         "feature_names": list(result.feature_names)},
            "baseline": base}


def write_model_json(result: PipelineResult, path) -> None:
    Path(path).write_text(json.dumps(result_model_dict(result)), encoding="utf-8")
