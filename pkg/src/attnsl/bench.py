"""Metrics, a KNN comparison model and the replicated experiment runner.

A run draws (or splits) data once per replication, fits every requested
model on the same train/test pair and reports the mean and standard error
of the test PSE and of the relative improvement over the lasso.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import (Dataset, apply_standardization, derive_seed, impute_train_means, load_csv, make_folds,
                   standardize)
from .linear import lasso_cv
from .pipeline import PipelineConfig, drift_correct, run_pipeline
from .simgen import DriftScenario, SimSetting, gen_drift_full, gen_homogeneous, gen_setting
from .trees import forest_fit, gbt_fit

__all__ = [
    "pse",
    "relative_improvement",
    "knn_predict",
    "KNNResult",
    "ExperimentConfig",
    "ExperimentError",
    "MetricReport",
    "run_experiment",
    "MODELS",
    "DRIFT_ARMS",
    "DriftReport",
    "run_drift_experiment",
    "drift_model",
    "drift_replication",
]

MODELS = ("lasso", "attention", "attention_ridge", "rf", "gbt", "knn",
          "attention_gbt", "approx_gbt", "approx_rf")
DRIFT_ARMS = ("baseline", "refit", "no_adaptation", "attention")
KNN_CANDIDATES = (3, 5, 10, 15)


class ExperimentError(RuntimeError):
    """A replication failed; ``seed`` identifies its data draw."""

    def __init__(self, message: str, replication: int, seed: int):
        super().__init__(f"replication {replication} (seed {seed}) failed: {message}")
        self.replication = replication
        self.seed = seed


def pse(y_true, y_pred) -> float:
    """Mean squared prediction error."""
    y = np.asarray(y_true, dtype=float)
    f = np.asarray(y_pred, dtype=float)
    if y.shape != f.shape:
        raise ValueError(f"length mismatch: {y.shape} vs {f.shape}")
    if y.size == 0:
        raise ValueError("pse of an empty vector")
    return float(np.mean((y - f) ** 2))


def relative_improvement(pse_lasso: float, pse_model: float) -> float:
    """Percent reduction in PSE relative to the lasso (negative when worse)."""
    if not pse_lasso > 0:
        raise ValueError("lasso PSE must be positive")
    return 100.0 * (pse_lasso - pse_model) / pse_lasso


# --------------------------------------------------------------------------
# k nearest neighbours
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class KNNResult:
    predictions: np.ndarray
    k: int
    cv_errors: dict


def _knn_core(Xtr, ytr, Xq, ks) -> dict:
    """Predictions for each k; neighbours ranked by distance, then row index."""
    _, params = standardize(Xtr)
    Z = apply_standardization(params, Xtr)
    Zq = apply_standardization(params, Xq)
    kmax = max(ks)
    nbrs = np.empty((Zq.shape[0], kmax), dtype=np.int64)
    for i in range(Zq.shape[0]):
        d2 = ((Z - Zq[i]) ** 2).sum(axis=1)
        nbrs[i] = np.argsort(d2, kind="stable")[:kmax]
    csum = np.cumsum(ytr[nbrs], axis=1)
    return {k: csum[:, k - 1] / k for k in ks}


def knn_predict(train, X_test, k_candidates=KNN_CANDIDATES, folds=None, seed: int = 0) -> KNNResult:
    """Mean response of the k nearest training rows (Euclidean, train-standardized).

    ``k`` is chosen from ``k_candidates`` by cross-validated MSE (10 folds
    unless ``folds`` is given; standardization is refit inside each fold).
    A single candidate skips the cross-validation.
    """
    X, y = np.asarray(train.features), np.asarray(train.response)
    Xq = np.atleast_2d(np.asarray(X_test, dtype=float))
    ks = sorted({int(k) for k in k_candidates})
    if not ks:
        raise ValueError("no k candidates")
    if ks[0] < 1 or ks[-1] > len(y):
        raise ValueError(f"k candidates must lie in [1, {len(y)}]")
    cv = {}
    if len(ks) > 1:
        folds = folds or make_folds(len(y), "k-fold", min(10, len(y)), seed)
        sq = {k: [] for k in ks}
        for tr, te in folds.splits():
            kk = [k for k in ks if k <= len(tr)]
            pr = _knn_core(X[tr], y[tr], X[te], kk)
            for k in ks:
                sq[k].append(np.mean((y[te] - pr[k]) ** 2) if k in pr else np.inf)
        cv = {k: float(np.mean(v)) for k, v in sq.items()}
        best = min(ks, key=lambda k: (cv[k], k))
    else:
        best = ks[0]
    return KNNResult(_knn_core(X, y, Xq, [best])[best], best, cv)


# --------------------------------------------------------------------------
# experiments
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    """One benchmark run.

    ``source`` is ``setting`` (simulation Settings 1-4), ``homogeneous``
    (one shared coefficient vector) or ``csv`` (random 50/50 splits of a
    data file). ``pipeline`` holds :class:`PipelineConfig` overrides used by
    the attention models; its seed is replaced per replication.
    """

    source: str = "setting"
    setting: int = 1
    n: int = 300
    p: int | None = None
    snr: float = 2.5
    models: tuple = ("lasso", "attention")
    replications: int = 100
    seed: int = 0
    csv_path: str | None = None
    response: str = "y"
    train_fraction: float = 0.5
    pipeline: dict = field(default_factory=dict)
    threads: int = 1

    def __post_init__(self):
        object.__setattr__(self, "models", tuple(self.models))
        object.__setattr__(self, "pipeline", dict(self.pipeline))
        self.validate()

    def validate(self) -> None:
        if self.source not in ("setting", "homogeneous", "csv"):
            raise ValueError(f"source must be setting, homogeneous or csv, got {self.source!r}")
        bad = [m for m in self.models if m not in MODELS]
        if bad or not self.models:
            raise ValueError(f"unknown models {bad}; choose from {list(MODELS)}")
        if len(set(self.models)) != len(self.models):
            raise ValueError("duplicate model names")
        if self.replications < 1 or self.threads < 1:
            raise ValueError("replications and threads must be >= 1")
        if self.source == "setting" and self.setting not in (1, 2, 3, 4):
            raise ValueError("setting must be 1, 2, 3 or 4")
        if self.source == "csv" and not self.csv_path:
            raise ValueError("csv source needs csv_path")
        PipelineConfig.from_dict(self.pipeline)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["models"] = list(self.models)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        unknown = sorted(set(d) - set(cls.__dataclass_fields__))
        if unknown:
            raise ValueError(f"unknown experiment config keys: {unknown}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True, eq=False)
class MetricReport:
    """Per-replication PSE and relative improvement, one column per model."""

    models: tuple
    pse: np.ndarray
    improvement: np.ndarray
    seeds: tuple
    label: str = ""

    @property
    def replications(self) -> int:
        return self.pse.shape[0]

    @staticmethod
    def _se(a: np.ndarray) -> np.ndarray:
        R = a.shape[0]
        if R < 2:
            return np.full(a.shape[1], np.nan)
        return a.std(axis=0, ddof=1) / np.sqrt(R)

    @property
    def mean_pse(self) -> np.ndarray:
        return self.pse.mean(axis=0)

    @property
    def se_pse(self) -> np.ndarray:
        return self._se(self.pse)

    @property
    def mean_improvement(self) -> np.ndarray:
        return self.improvement.mean(axis=0)

    @property
    def se_improvement(self) -> np.ndarray:
        return self._se(self.improvement)

    def cell(self, model: str) -> tuple[float, float]:
        j = self.models.index(model)
        return float(self.mean_improvement[j]), float(self.se_improvement[j])

    def to_csv(self, path=None) -> str:
        lines = ["model,replications,mean_pse,se_pse,mean_improvement,se_improvement"]
        for j, m in enumerate(self.models):
            lines.append(",".join([m, str(self.replications), repr(float(self.mean_pse[j])),
                                   repr(float(self.se_pse[j])), repr(float(self.mean_improvement[j])),
                                   repr(float(self.se_improvement[j]))]))
        text = "\n".join(lines) + "\n"
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    def to_text(self) -> str:
        """Aligned table; cells read ``mean (se)``."""
        def cell(mu, se):
            return f"{mu:.1f}" if np.isnan(se) else f"{mu:.1f} ({se:.1f})"

        head = ["model", "PSE", "improvement %"]
        rows = [[m, cell(self.mean_pse[j], self.se_pse[j]),
                 cell(self.mean_improvement[j], self.se_improvement[j])] for j, m in enumerate(self.models)]
        w = [max(len(r[c]) for r in [head, *rows]) for c in range(3)]
        fmt = lambda r: "  ".join([r[0].ljust(w[0]), r[1].rjust(w[1]), r[2].rjust(w[2])])
        title = [self.label, ""] if self.label else []
        return "\n".join(title + [fmt(head), "  ".join("-" * x for x in w), *map(fmt, rows)]) + "\n"


def _split(cfg: ExperimentConfig, seed: int, full: Dataset | None):
    if cfg.source == "setting":
        train, test, _ = gen_setting(SimSetting(cfg.setting, cfg.n, cfg.p, cfg.snr, seed))
        return train, test
    if cfg.source == "homogeneous":
        train, test, _ = gen_homogeneous(cfg.n, cfg.p or 30, seed, cfg.snr)
        return train, test
    plan = make_folds(full.n, "random-split", 2, seed, cfg.train_fraction)
    train, (test,) = impute_train_means(full.subset(plan.assignments == 0),
                                        [full.subset(plan.assignments == 1)])
    return train, test


def _fit_models(cfg: ExperimentConfig, train: Dataset, test: Dataset, seed: int) -> dict:
    """Test predictions of every model for one replication."""
    X, y, Xq = train.features, train.response, test.features
    pc = PipelineConfig.from_dict({**cfg.pipeline, "seed": seed})
    # the lasso shares the pipelines' baseline folds, so it equals their y_base
    base_folds = make_folds(len(y), pc.fold_kind, min(pc.cv_folds, len(y)), derive_seed(seed, 1))
    out = {}
    for m in ("lasso", *cfg.models):
        if m in out:
            continue
        if m == "lasso":
            out[m] = lasso_cv(X, y, base_folds, feature_names=train.feature_names)[0].predict(Xq)
        elif m == "attention":
            out[m] = run_pipeline(train, Xq, replace(pc, base_learner="lasso", similarity="forest",
                                                     approximate=False)).y_blend
        elif m == "attention_ridge":
            out[m] = run_pipeline(train, Xq, replace(pc, base_learner="lasso", similarity="ridge",
                                                     approximate=False)).y_blend
        elif m == "attention_gbt":
            out[m] = run_pipeline(train, Xq, replace(pc, base_learner="gbt", approximate=False)).y_blend
        elif m == "approx_gbt":
            out[m] = run_pipeline(train, Xq, replace(pc, base_learner="gbt", approximate=True)).y_blend
        elif m == "approx_rf":
            out[m] = run_pipeline(train, Xq, replace(pc, base_learner="forest", approximate=True)).y_blend
        elif m == "rf":
            out[m] = forest_fit(X, y, pc.num_trees, pc.mtry, pc.min_node_size, derive_seed(seed, 5)).predict(Xq)
        elif m == "gbt":
            out[m] = gbt_fit(X, y, pc.gbt_rounds, pc.gbt_learning_rate, pc.gbt_max_leaves, folds=base_folds,
                             seed=seed, patience=pc.gbt_patience).predict(Xq)
        elif m == "knn":
            out[m] = knn_predict(train, Xq, KNN_CANDIDATES, seed=derive_seed(seed, 6)).predictions
    return out


def _map(fn, items, threads):
    if threads <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(min(threads, len(items))) as ex:
        return list(ex.map(fn, items))


def run_experiment(config: ExperimentConfig | dict, progress=None) -> MetricReport:
    """Replicated comparison of ``config.models`` against the lasso.

    Replication ``r`` uses data seed ``derive_seed(config.seed, r)``, so the
    data never depend on which models are requested. ``progress`` is called
    with the replication index after each one finishes.
    """
    cfg = config if isinstance(config, ExperimentConfig) else ExperimentConfig.from_dict(config)
    full = load_csv(cfg.csv_path, cfg.response) if cfg.source == "csv" else None
    seeds = tuple(derive_seed(cfg.seed, r) for r in range(cfg.replications))

    def one(r):
        s = seeds[r]
        try:
            train, test = _split(cfg, s, full)
            preds = _fit_models(cfg, train, test, s)
        except Exception as exc:  # report which draw broke
            raise ExperimentError(str(exc), r, s) from exc
        row = np.array([pse(test.response, preds[m]) for m in cfg.models])
        base = pse(test.response, preds["lasso"])
        imp = np.array([0.0 if m == "lasso" else relative_improvement(base, row[j])
                        for j, m in enumerate(cfg.models)])
        if progress is not None:
            progress(r)
        return row, imp

    res = _map(one, list(range(cfg.replications)), cfg.threads)
    label = {"setting": f"setting {cfg.setting}", "homogeneous": "homogeneous",
             "csv": str(cfg.csv_path)}[cfg.source]
    return MetricReport(cfg.models, np.array([r[0] for r in res]), np.array([r[1] for r in res]),
                        seeds, label)


# --------------------------------------------------------------------------
# drift
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DriftReport:
    """PSE per seed (rows) and arm (columns, in :data:`DRIFT_ARMS` order)."""

    pse: np.ndarray
    seeds: tuple

    @property
    def medians(self) -> dict:
        return dict(zip(DRIFT_ARMS, np.median(self.pse, axis=0).tolist()))

    @property
    def gap_closed(self) -> float:
        """Share of the no-adaptation minus refit median gap recovered by the correction."""
        m = self.medians
        gap = m["no_adaptation"] - m["refit"]
        return float((m["no_adaptation"] - m["attention"]) / gap) if gap != 0 else float("nan")

    def to_csv(self, path=None) -> str:
        lines = ["seed," + ",".join(DRIFT_ARMS)]
        lines += [",".join([str(s), *(repr(float(v)) for v in row)]) for s, row in zip(self.seeds, self.pse)]
        text = "\n".join(lines) + "\n"
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    def to_text(self) -> str:
        m = self.medians
        w = max(map(len, DRIFT_ARMS))
        rows = [f"{a.ljust(w)}  {m[a]:10.2f}" for a in DRIFT_ARMS]
        return "\n".join([f"{'arm'.ljust(w)}  {'median PSE':>10}", *rows,
                          f"gap closed: {100 * self.gap_closed:.1f}%"]) + "\n"


def drift_model(train: Dataset):
    """Boosted trees with 100 rounds, learning rate 0.1, 31 leaves and 20 rows per leaf."""
    return gbt_fit(train.features, train.response, 100, 0.1, max_leaves=31, min_leaf=20)


def drift_replication(scenario: DriftScenario, seed: int, temperature: float = 0.1) -> np.ndarray:
    """PSE of the four arms for one draw.

    baseline: time-1 model on held-out time-1 rows; refit: a model fit on
    time 2, scored at time 3; no_adaptation: the time-1 model at time 3;
    attention: the time-1 model plus attention-weighted time-2 residuals.
    """
    d = gen_drift_full(scenario, seed)
    f1 = drift_model(d.d1)
    f2 = drift_model(d.d2)
    X3, y3 = d.d3.features, d.d3.response
    return np.array([
        pse(d.d1_test.response, f1.predict(d.d1_test.features)),
        pse(y3, f2.predict(X3)),
        pse(y3, f1.predict(X3)),
        pse(y3, drift_correct(f1, d.d2.features, d.d2.response, X3, temperature)),
    ])


def run_drift_experiment(scenario: DriftScenario | None = None, replications: int = 50, seed: int = 0,
                         temperature: float = 0.1, threads: int = 1) -> DriftReport:
    scenario = scenario or DriftScenario()
    seeds = tuple(derive_seed(seed, r) for r in range(replications))
    rows = _map(lambda s: drift_replication(scenario, s, temperature), list(seeds), threads)
    return DriftReport(np.array(rows), seeds)
