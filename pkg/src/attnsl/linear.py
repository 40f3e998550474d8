"""Ridge regression and weighted lasso by coordinate descent.

All fits standardize features internally (weighted mean and population sd
under the observation weights), leave the intercept unpenalized and report
coefficients on the original feature scale.

Weighted lasso objective, with weights rescaled to sum to ``n``::

    (1 / 2n) * sum_i w_i (y_i - b0 - x_i' b)^2 + lam * ||b||_1

This convention makes one penalty level meaningful across fits whose raw
weights have different totals (e.g. softmax rows, which sum to 1).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .data import FoldPlan

__all__ = [
    "NumericError",
    "ConvergenceWarning",
    "LinearModel",
    "ridge_fit",
    "ridge_cv",
    "weighted_lasso_fit",
    "lambda_max",
    "lambda_path",
    "lasso_path",
    "lasso_cv",
    "lasso_cv_errors",
    "predict",
    "kkt_residuals",
]

CD_TOL = 1e-7
MAX_SWEEPS = 10_000


class NumericError(RuntimeError):
    """A numerical routine could not produce a valid answer."""


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class LinearModel:
    intercept: float
    coefficients: np.ndarray
    lam: float = 0.0
    kind: str = "lasso"
    feature_names: tuple[str, ...] = ()
    converged: bool = True
    n_sweeps: int = 0
    # standardized-scale coefficients, kept for diagnostics (ridge attention, KKT)
    std_coefficients: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def p(self) -> int:
        return self.coefficients.shape[0]

    def predict(self, X) -> np.ndarray:
        return predict(self, X)

    def to_dict(self) -> dict:
        names = list(self.feature_names) or [f"x{j + 1}" for j in range(self.p)]
        return {"kind": self.kind, "lambda": float(self.lam), "intercept": float(self.intercept),
                "coefficients": [float(b) for b in self.coefficients], "feature_names": names}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "LinearModel":
        return cls(float(d["intercept"]), np.asarray(d["coefficients"], dtype=float),
                   float(d["lambda"]), d["kind"], tuple(d.get("feature_names", ())))


def predict(model: LinearModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != model.p:
        raise ValueError(f"model has {model.p} coefficients, X has {X.shape[1]} columns")
    return model.intercept + X @ model.coefficients


# --------------------------------------------------------------------------
# weighted standardization and Gram form
# --------------------------------------------------------------------------

@dataclass
class _Design:
    xm: np.ndarray
    sd: np.ndarray
    ym: float
    G: np.ndarray
    c: np.ndarray
    yss: float  # (1/n) sum w (y - ym)^2, constant term of the objective
    Xs: np.ndarray
    yc: np.ndarray
    w: np.ndarray


def _rescale(w, n):
    w = np.asarray(w, dtype=float)
    if w.shape != (n,):
        raise ValueError(f"need {n} weights, got shape {w.shape}")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError("weights must be finite and nonnegative")
    s = w.sum()
    if s <= 0:
        raise ValueError("at least one weight must be positive")
    return w * (n / s)


def _design(X, y, w=None, intercept=True) -> _Design:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = X.shape[0]
    if y.shape != (n,):
        raise ValueError("X and y have different numbers of rows")
    if np.isnan(X).any():
        raise ValueError("X contains missing values; impute first")
    w = np.ones(n) if w is None else _rescale(w, n)
    if intercept:
        xm = w @ X / n
        ym = float(w @ y / n)
    else:
        xm = np.zeros(X.shape[1])
        ym = 0.0
    Xc = X - xm
    sd = np.sqrt(w @ (Xc * Xc) / n)
    # relative cut: a column constant up to rounding has no usable direction
    const = sd <= 1e-12 * np.maximum(1.0, np.abs(xm))
    sd = np.where(const, 1.0, sd)
    Xs = Xc / sd
    Xs[:, const] = 0.0
    yc = y - ym
    Xw = Xs * w[:, None]
    G = Xw.T @ Xs / n
    c = Xw.T @ yc / n
    return _Design(xm, sd, ym, G, c, float(w @ (yc * yc) / n), Xs, yc, w)


def _to_model(d: _Design, beta_std, lam, kind, names=(), converged=True, sweeps=0) -> LinearModel:
    beta = beta_std / d.sd
    b0 = d.ym - float(d.xm @ beta)
    return LinearModel(b0, beta, float(lam), kind, tuple(names), bool(converged), int(sweeps),
                       np.array(beta_std, dtype=float))


# --------------------------------------------------------------------------
# ridge
# --------------------------------------------------------------------------

def ridge_fit(X, y, lam: float, feature_names=(), *, intercept: bool = True) -> LinearModel:
    """Closed-form ridge on standardized features, unpenalized intercept.

    Solves ``(X~'X~/n + lam I) b = X~'y~/n``. With ``intercept=False``
    nothing is centered and columns are scaled by their root mean square.
    """
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    d = _design(X, y, intercept=intercept)
    A = d.G + lam * np.eye(d.G.shape[0])
    if lam == 0:
        if np.linalg.matrix_rank(A) < A.shape[0]:
            raise NumericError("singular Gram matrix at lambda = 0")
    try:
        beta = np.linalg.solve(A, d.c)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"ridge solve failed: {exc}") from exc
    return _to_model(d, beta, lam, "ridge", feature_names)


def _ridge_path_std(d: _Design, lambdas):
    evals, V = np.linalg.eigh(d.G)
    evals = np.clip(evals, 0.0, None)
    Vc = V.T @ d.c
    return np.array([V @ (Vc / (evals + lam)) for lam in lambdas])


def ridge_cv(X, y, folds: FoldPlan, lambdas=None, feature_names=(), *,
             intercept: bool = True) -> tuple[LinearModel, float]:
    """Ridge with the penalty chosen by fold-mean squared error.

    The default grid is the lasso grid from :func:`lambda_path`. Ties go to
    the larger penalty.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if lambdas is None:
        lambdas = lambda_path(X, y, intercept=intercept)
    lambdas = np.asarray(lambdas, dtype=float)
    lambdas = np.where(lambdas > 0, lambdas, 1e-8)
    err = np.zeros(len(lambdas))
    n_folds = 0
    for tr, te in folds.splits():
        d = _design(X[tr], y[tr], intercept=intercept)
        B = _ridge_path_std(d, lambdas) / d.sd
        b0 = d.ym - B @ d.xm
        pred = b0[:, None] + B @ X[te].T
        err += ((pred - y[te]) ** 2).mean(axis=1)
        n_folds += 1
    err /= n_folds
    best = int(np.argmin(err))
    lam = float(lambdas[best])
    return ridge_fit(X, y, lam, feature_names, intercept=intercept), lam


# --------------------------------------------------------------------------
# coordinate descent kernel
# --------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def _soft(z, t):
    if z > t:
        return z - t
    if z < -t:
        return z + t
    return 0.0


@njit(cache=True, nogil=True)
def _objective(G, c, beta, lam, yss):
    p = beta.shape[0]
    q = 0.0
    for j in range(p):
        s = 0.0
        for k in range(p):
            s += G[j, k] * beta[k]
        q += beta[j] * (0.5 * s - c[j])
    l1 = 0.0
    for j in range(p):
        l1 += abs(beta[j])
    return q + 0.5 * yss + lam * l1


@njit(cache=True, nogil=True)
def _sweep(G, grad, beta, lam, only_active):
    p = beta.shape[0]
    maxd = 0.0
    for j in range(p):
        gjj = G[j, j]
        old = beta[j]
        if gjj <= 0.0 or (only_active and old == 0.0):
            continue
        new = _soft(grad[j] + gjj * old, lam) / gjj
        if new != old:
            d = new - old
            for k in range(p):
                grad[k] -= G[k, j] * d
            beta[j] = new
            if abs(d) > maxd:
                maxd = abs(d)
    return maxd


@njit(cache=True, nogil=True)
def _kkt_max(G, c, beta, lam):
    p = beta.shape[0]
    worst = 0.0
    for j in range(p):
        if G[j, j] <= 0.0:
            continue
        g = c[j]
        for k in range(p):
            g -= G[j, k] * beta[k]
        if beta[j] > 0:
            v = abs(g - lam)
        elif beta[j] < 0:
            v = abs(g + lam)
        else:
            v = abs(g) - lam
        if v > worst:
            worst = v
    return worst


@njit(cache=True, nogil=True)
def _cd(G, c, lam, beta, tol, max_sweeps, trace, yss):
    """Cyclic CD with active-set passes; ``beta`` is updated in place.

    Returns (sweeps, converged). ``trace`` (length >= max_sweeps, or empty)
    receives the objective after each sweep.
    """
    p = beta.shape[0]
    grad = c.copy()
    for j in range(p):
        if beta[j] != 0.0:
            for k in range(p):
                grad[k] -= G[k, j] * beta[j]
    sweeps = 0
    do_trace = trace.shape[0] > 0
    while sweeps < max_sweeps:
        maxd = _sweep(G, grad, beta, lam, False)
        if do_trace:
            trace[sweeps] = _objective(G, c, beta, lam, yss)
        sweeps += 1
        if maxd < tol:
            # refresh the gradient to shed accumulated rounding before checking KKT
            for k in range(p):
                s = c[k]
                for j in range(p):
                    s -= G[k, j] * beta[j]
                grad[k] = s
            if _kkt_max(G, c, beta, lam) < tol:
                return sweeps, True
            continue
        while sweeps < max_sweeps:
            maxd = _sweep(G, grad, beta, lam, True)
            if do_trace:
                trace[sweeps] = _objective(G, c, beta, lam, yss)
            sweeps += 1
            if maxd < tol:
                break
    return sweeps, False


@njit(cache=True, nogil=True)
def _cd_path(G, c, lambdas, tol, max_sweeps):
    p = c.shape[0]
    L = lambdas.shape[0]
    B = np.zeros((L, p))
    beta = np.zeros(p)
    ok = True
    empty = np.zeros(0)
    for i in range(L):
        _, conv = _cd(G, c, lambdas[i], beta, tol, max_sweeps, empty, 0.0)
        ok = ok and conv
        B[i] = beta
    return B, ok


# --------------------------------------------------------------------------
# lasso
# --------------------------------------------------------------------------

def lambda_max(X, y, w=None, intercept: bool = True) -> float:
    """Smallest penalty at which every lasso coefficient is zero."""
    d = _design(X, y, w, intercept)
    return float(np.max(np.abs(d.c))) if d.c.size else 0.0


def lambda_path(X, y, w=None, n_lambda: int = 100, ratio: float | None = None,
                intercept: bool = True) -> np.ndarray:
    """Log-spaced decreasing grid from ``lambda_max`` to ``ratio * lambda_max``.

    ``ratio`` defaults to 1e-3, or 1e-2 when n < p. A zero ``lambda_max``
    (constant response) gives the one-point grid ``[0.0]``.
    """
    X = np.asarray(X, dtype=float)
    lmax = lambda_max(X, y, w, intercept)
    if lmax <= 0:
        return np.array([0.0])
    if ratio is None:
        ratio = 1e-2 if X.shape[0] < X.shape[1] else 1e-3
    return np.exp(np.linspace(np.log(lmax), np.log(lmax * ratio), n_lambda))


def weighted_lasso_fit(X, y, w=None, lam: float = 0.0, *, intercept: bool = True,
                       warm_start: LinearModel | None = None, tol: float = CD_TOL,
                       max_sweeps: int = MAX_SWEEPS, feature_names=(),
                       trace: bool = False):
    """Weighted lasso at a single penalty.

    ``w`` may be any nonnegative vector with a positive entry; it is
    rescaled to sum to ``n`` so multiplying it by a constant changes
    nothing, and a zero weight is the same as dropping the row.
    ``warm_start`` seeds coordinate descent from another model's
    coefficients. With ``trace=True`` returns ``(model, objective_per_sweep)``.

    Non-convergence emits :class:`ConvergenceWarning` and returns the last
    iterate with ``converged=False``.
    """
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    d = _design(X, y, w, intercept)
    beta = np.zeros(d.c.shape[0])
    if warm_start is not None:
        beta = np.asarray(warm_start.coefficients, dtype=float) * d.sd
    tr = np.zeros(max_sweeps) if trace else np.zeros(0)
    sweeps, ok = _cd(d.G, d.c, float(lam), beta, tol, max_sweeps, tr, d.yss)
    if not ok:
        warnings.warn(f"lasso did not converge in {max_sweeps} sweeps (lambda={lam:g})",
                      ConvergenceWarning, stacklevel=2)
    model = _to_model(d, beta, lam, "lasso", feature_names, ok, sweeps)
    if trace:
        return model, tr[:sweeps].copy()
    return model


def lasso_path(X, y, lambdas, w=None, feature_names=(), *, intercept: bool = True) -> list[LinearModel]:
    """Warm-started lasso fits along a decreasing penalty grid."""
    d = _design(X, y, w, intercept)
    lambdas = np.asarray(lambdas, dtype=float)
    B, ok = _cd_path(d.G, d.c, lambdas, CD_TOL, MAX_SWEEPS)
    if not ok:
        warnings.warn("lasso path did not fully converge", ConvergenceWarning, stacklevel=2)
    return [_to_model(d, B[i], lambdas[i], "lasso", feature_names, ok) for i in range(len(lambdas))]


def lasso_cv_errors(X, y, folds: FoldPlan, path, *, intercept: bool = True) -> np.ndarray:
    """Mean over folds of the held-out MSE, one entry per penalty."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    path = np.asarray(path, dtype=float)
    err = np.zeros(len(path))
    n_folds = 0
    for tr, te in folds.splits():
        d = _design(X[tr], y[tr], intercept=intercept)
        Bs, _ = _cd_path(d.G, d.c, path, CD_TOL, MAX_SWEEPS)
        B = Bs / d.sd
        b0 = d.ym - B @ d.xm
        pred = b0[:, None] + B @ X[te].T
        err += ((pred - y[te]) ** 2).mean(axis=1)
        n_folds += 1
    return err / n_folds


def lasso_cv(X, y, folds: FoldPlan, path=None, feature_names=(), *,
             intercept: bool = True) -> tuple[LinearModel, float]:
    """Pick the penalty by cross-validation and refit on all rows.

    The grid defaults to :func:`lambda_path` on the full data. Ties in
    fold-mean error go to the larger penalty (the sparser model).
    """
    if path is None:
        path = lambda_path(X, y, intercept=intercept)
    path = np.asarray(path, dtype=float)
    err = lasso_cv_errors(X, y, folds, path, intercept=intercept)
    best = int(np.flatnonzero(err == err.min())[0])
    lam = float(path[best])
    # refit along the path prefix so the final model is warm-started as glmnet would
    models = lasso_path(X, y, path[: best + 1], feature_names=feature_names, intercept=intercept)
    return models[-1], lam


def kkt_residuals(model: LinearModel, X, y, w=None, intercept: bool = True) -> np.ndarray:
    """Per-coordinate KKT violation of a lasso solution (standardized scale).

    For an active coordinate the value is ``|g_j - lam * sign(b_j)|``; for
    an inactive one it is ``max(|g_j| - lam, 0)``, where ``g_j`` is the
    weighted correlation of feature j with the residual.
    """
    d = _design(X, y, w, intercept)
    beta = model.coefficients * d.sd
    g = d.c - d.G @ beta
    active = beta != 0
    v = np.where(active, np.abs(g - model.lam * np.sign(beta)), np.maximum(np.abs(g) - model.lam, 0.0))
    return np.where(np.diag(d.G) > 0, v, 0.0)
