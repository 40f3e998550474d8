"""Attention weights from supervised similarity scores.

A score row ``s`` (one test point against every training row) becomes a
weight row ``softmax(s / temperature)``. Scores come either from random
forest proximity or from the ridge-diagonal inner product
``x*' diag(|b_ridge|) x_j`` on standardized features.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import DataError, FoldPlan, StandardizationParams, apply_standardization, make_folds, standardize
from .linear import NumericError, ridge_cv, ridge_fit
from .trees import TreeEnsemble, proximity

__all__ = [
    "AttentionMatrix",
    "DiagonalAttention",
    "softmax_rows",
    "fit_diagonal_attention",
    "ridge_diag_scores",
    "attention_from_ridge",
    "attention_from_forest",
    "gaussian_kernel_weights",
    "write_attention_csv",
]


@dataclass(frozen=True, eq=False)
class AttentionMatrix:
    """Row-stochastic weights, shape (n_test, n_train)."""

    weights: np.ndarray
    temperature: float = 1.0

    def __post_init__(self):
        W = np.asarray(self.weights, dtype=float)
        if W.ndim != 2:
            raise DataError(f"attention weights must be 2-D, got {W.shape}")
        W.setflags(write=False)
        object.__setattr__(self, "weights", W)

    @property
    def shape(self):
        return self.weights.shape

    def row(self, i: int) -> np.ndarray:
        return self.weights[i]


def softmax_rows(scores, temperature: float = 1.0) -> AttentionMatrix:
    """Row-wise softmax of ``scores / temperature`` with max subtraction."""
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    S = np.atleast_2d(np.asarray(scores, dtype=float))
    if not np.isfinite(S).all():
        raise NumericError("attention scores must be finite")
    Z = S / temperature
    Z = Z - Z.max(axis=1, keepdims=True)
    E = np.exp(Z)
    return AttentionMatrix(E / E.sum(axis=1, keepdims=True), float(temperature))


@dataclass(frozen=True, eq=False)
class DiagonalAttention:
    """Feature weights ``diag = |ridge coefficients|`` on the standardized scale.

    ``params`` are the training standardization parameters used to bring
    both test and training rows onto that scale before scoring.
    """

    diag: np.ndarray
    params: StandardizationParams | None = None
    ridge_lambda: float = 0.0

    def __post_init__(self):
        d = np.asarray(self.diag, dtype=float)
        if d.ndim != 1 or (d < 0).any() or not np.isfinite(d).all():
            raise ValueError("diag must be a finite nonnegative vector")
        object.__setattr__(self, "diag", d)

    def scores(self, X_test, X_train) -> np.ndarray:
        if self.params is not None:
            X_test = apply_standardization(self.params, X_test)
            X_train = apply_standardization(self.params, X_train)
        return ridge_diag_scores(X_test, X_train, self.diag)


def fit_diagonal_attention(X, y, lam: float | None = None, folds: FoldPlan | None = None,
                           seed: int = 0) -> DiagonalAttention:
    """Ridge fit for the diagonal attention weights.

    ``lam=None`` selects the ridge penalty by 10-fold CV (``folds`` if given)
    over the default lasso-style grid.
    """
    X = np.asarray(X, dtype=float)
    _, params = standardize(X)
    if lam is None:
        folds = folds or make_folds(X.shape[0], "k-fold", min(10, X.shape[0]), seed)
        model, lam = ridge_cv(X, y, folds)
    else:
        model = ridge_fit(X, y, lam)
    return DiagonalAttention(np.abs(model.std_coefficients), params, float(lam))


def ridge_diag_scores(x_star, X_train, diag) -> np.ndarray:
    """Scores ``sum_k x*_k diag_k X_train[j, k]``; ``x_star`` may be one row or many."""
    d = diag.diag if isinstance(diag, DiagonalAttention) else np.asarray(diag, dtype=float)
    x = np.asarray(x_star, dtype=float)
    Xt = np.asarray(X_train, dtype=float)
    if x.shape[-1] != Xt.shape[1] or d.shape != (Xt.shape[1],):
        raise DataError(f"dimension mismatch: x* {x.shape}, X_train {Xt.shape}, diag {d.shape}")
    return (x * d) @ Xt.T


def attention_from_ridge(att: DiagonalAttention, X_test, X_train, temperature: float = 1.0) -> AttentionMatrix:
    return softmax_rows(att.scores(np.atleast_2d(X_test), X_train), temperature)


def attention_from_forest(forest: TreeEnsemble, X_test, X_train, temperature: float = 1.0) -> AttentionMatrix:
    """Softmax of raw forest proximity from test rows to training rows."""
    return softmax_rows(proximity(forest, np.atleast_2d(X_test), X_train), temperature)


def gaussian_kernel_weights(x_star, X_train, sigma: float) -> np.ndarray:
    """Normalized weights ``exp(-|x* - x_j|^2 / (2 sigma^2))``.

    Evaluated in log space (shifted by the smallest distance) so that tiny
    ``sigma`` concentrates mass instead of underflowing to 0/0. A 2-D
    ``x_star`` returns one weight row per test row.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    x = np.asarray(x_star, dtype=float)
    Xt = np.asarray(X_train, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    d2 = ((x[:, None, :] - Xt[None, :, :]) ** 2).sum(axis=2)
    logk = -(d2 - d2.min(axis=1, keepdims=True)) / (2.0 * sigma * sigma)
    K = np.exp(logk)
    W = K / K.sum(axis=1, keepdims=True)
    return W[0] if single else W


def write_attention_csv(att: AttentionMatrix, path, test_ids=None, train_ids=None) -> None:
    """Long-format export: ``test_row_id,train_row_id,weight``."""
    W = att.weights
    test_ids = test_ids if test_ids is not None else [str(i) for i in range(W.shape[0])]
    train_ids = train_ids if train_ids is not None else [str(j) for j in range(W.shape[1])]
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write("test_row_id,train_row_id,weight\n")
        for i, a in enumerate(test_ids):
            fh.writelines(f"{a},{b},{float(W[i, j])!r}\n" for j, b in enumerate(train_ids))
