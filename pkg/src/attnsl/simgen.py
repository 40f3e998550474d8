"""Synthetic data: heterogeneous-coefficient settings, two-cluster mixtures and drift.

Every generator is a pure function of its parameters and seed. Noise in
the heterogeneous settings is calibrated per draw: ``sigma`` is solved from
the realized variance of the noiseless signal so that
``var(signal) / sigma**2`` equals the target SNR.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attention import DiagonalAttention, ridge_diag_scores, softmax_rows
from .data import Dataset, make_folds
from .linear import lasso_cv, ridge_cv, weighted_lasso_fit

__all__ = [
    "SimSetting",
    "SettingTruth",
    "gen_setting",
    "gen_homogeneous",
    "MixtureSpec",
    "gen_mixture",
    "pooled_beta_star",
    "population_mse",
    "TheoryReport",
    "theory_check",
    "DriftScenario",
    "gen_drift",
    "gen_drift_full",
    "DriftDraw",
    "drift_signal",
    "membership_weights",
]


@dataclass(frozen=True)
class SimSetting:
    id: int
    n: int = 300
    p: int | None = None
    target_snr: float = 2.5
    seed: int = 0

    def __post_init__(self):
        if self.id not in (1, 2, 3, 4):
            raise ValueError(f"setting id must be 1-4, got {self.id}")
        if self.p is None:
            object.__setattr__(self, "p", 100 if self.id == 2 else 30)
        min_p = {1: 4, 2: 6, 3: 18, 4: 4}[self.id]
        if self.p < min_p:
            raise ValueError(f"setting {self.id} needs p >= {min_p}")
        if self.n < 2 or self.target_snr <= 0:
            raise ValueError("need n >= 2 and a positive SNR")


@dataclass(frozen=True, eq=False)
class SettingTruth:
    """Per-row true coefficients and latent variables of a generated setting.

    ``latent`` is z for settings 1, 2 and 4 and the group (1 majority,
    2 minority) for setting 3.
    """

    coef_train: np.ndarray
    coef_test: np.ndarray
    latent_train: np.ndarray
    latent_test: np.ndarray
    sigma: float
    signal_var: float


def membership_weights(z, centers=(0.2, 0.5, 0.8), sd: float = 0.15) -> np.ndarray:
    """Gaussian-density memberships normalized per row, shape (len(z), 3)."""
    z = np.asarray(z, dtype=float)[:, None]
    c = np.asarray(centers)[None, :]
    dens = np.exp(-0.5 * ((z - c) / sd) ** 2)
    return dens / dens.sum(axis=1, keepdims=True)


def _interp(beta0, beta1, z):
    w = (z + 1.0) / 2.0
    # z = -1 gives beta0, z = 1 gives beta1
    return (1.0 - w)[:, None] * beta0[None, :] + w[:, None] * beta1[None, :]


def _setting_rows(s: SimSetting, N: int, rng: np.random.Generator):
    p = s.p
    X = rng.standard_normal((N, p))
    if s.id == 1:
        b0 = np.zeros(p)
        b0[:4] = 3.0
        b1 = np.zeros(p)
        b1[:4] = -2.0
        z = rng.uniform(-1.0, 1.0, N)
        B = _interp(b0, b1, z)
        X[:, :4] += z[:, None]
        return X, B, z
    if s.id == 2:
        b0 = np.zeros(p)
        b0[:3] = (3, 2, 1)
        b1 = np.zeros(p)
        b1[:6] = (-1, 0, 1, 2, 3, 2)
        z = rng.uniform(0.0, 1.0, N)
        B = _interp(b0, b1, z)
        X[:, :6] += z[:, None]
        return X, B, z
    if s.id == 4:
        betas = np.zeros((3, p))
        betas[0, :4] = (3, 3, 2, 1)
        betas[1, :4] = (-2, 1, 3, 2)
        betas[2, :4] = (1, -2, -1, 3)
        z = rng.uniform(0.0, 1.0, N)
        B = membership_weights(z) @ betas
        X[:, :4] += z[:, None]
        return X, B, z
    raise AssertionError


def _setting3(s: SimSetting, rng: np.random.Generator):
    """Both halves share coefficients, the spurious feature set and its shifts."""
    p, n = s.p, s.n
    b1 = np.zeros(p)
    b1[:4] = rng.standard_normal(4)
    b2 = np.zeros(p)
    b2[4:8] = rng.standard_normal(4)
    spurious = np.sort(rng.choice(np.arange(8, p), size=10, replace=False))
    shifts = rng.standard_normal(10)
    n_minor = int(round(0.2 * n))
    halves = []
    for _ in range(2):
        X = rng.standard_normal((n, p))
        g = np.ones(n, dtype=int)
        g[rng.permutation(n)[:n_minor]] = 2
        X[g == 2, :8] += 2.0
        hit = rng.permutation(n)[: n // 2]
        X[np.ix_(hit, spurious)] += shifts
        B = np.where(g[:, None] == 1, b1, b2)
        halves.append((X, B, g))
    return halves


def _finish(Xs, Bs, Ls, snr, rng, names=None):
    sig = [np.einsum("ij,ij->i", X, B) for X, B in zip(Xs, Bs)]
    signal_var = float(np.var(np.concatenate(sig)))
    sigma = float(np.sqrt(signal_var / snr)) if signal_var > 0 else 1.0
    ys = [f + sigma * rng.standard_normal(len(f)) for f in sig]
    ds = [Dataset.from_arrays(X, y, names) for X, y in zip(Xs, ys)]
    return ds[0], ds[1], SettingTruth(Bs[0], Bs[1], Ls[0], Ls[1], sigma, signal_var)


def gen_setting(setting: SimSetting) -> tuple[Dataset, Dataset, SettingTruth]:
    """Train and test sets (``n`` rows each) for one of the four settings.

    Setting 1: z ~ U(-1, 1), coefficients move linearly from (3,3,3,3,0,...)
    at z = -1 to (-2,-2,-2,-2,0,...) at z = 1, and z is added to features
    1-4. Setting 2: the same construction with z ~ U(0, 1), p = 100 and
    shifts on features 1-6. Setting 3: exact 80/20 groups with N(0, 1)
    coefficients on features 1-4 (majority) or 5-8 (minority), minority
    features 1-8 shifted by +2, and a random half of rows shifted on 10
    random noise features. Setting 4: soft membership in three groups via
    Gaussian densities in z.
    """
    rng = np.random.default_rng(setting.seed)
    if setting.id == 3:
        (X1, B1, L1), (X2, B2, L2) = _setting3(setting, rng)
    else:
        X, B, L = _setting_rows(setting, 2 * setting.n, rng)
        n = setting.n
        X1, B1, L1 = X[:n], B[:n], L[:n]
        X2, B2, L2 = X[n:], B[n:], L[n:]
    return _finish([X1, X2], [B1, B2], [L1, L2], setting.target_snr, rng)


def gen_homogeneous(n: int = 300, p: int = 30, seed: int = 0, snr: float = 2.5,
                    beta=None) -> tuple[Dataset, Dataset, SettingTruth]:
    """Single linear model with N(0, I) features; ``beta`` defaults to (3,3,3,3,0,...)."""
    rng = np.random.default_rng(seed)
    if beta is None:
        beta = np.zeros(p)
        beta[: min(4, p)] = 3.0
    beta = np.asarray(beta, dtype=float)
    X = rng.standard_normal((2 * n, p))
    B = np.broadcast_to(beta, X.shape)
    L = np.zeros(2 * n)
    return _finish([X[:n], X[n:]], [B[:n], B[n:]], [L[:n], L[n:]], snr, rng)


# --------------------------------------------------------------------------
# two-cluster mixture
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MixtureSpec:
    """Two linear models with Gaussian features ``N(mu_k, Sigma)``."""

    pi: tuple
    beta1: np.ndarray
    beta2: np.ndarray
    mu1: np.ndarray
    mu2: np.ndarray
    Sigma: np.ndarray
    sigma_noise: float = 1.0

    def __post_init__(self):
        pi = tuple(float(v) for v in self.pi)
        if len(pi) != 2 or min(pi) < 0 or abs(sum(pi) - 1) > 1e-12:
            raise ValueError("pi must be two nonnegative values summing to 1")
        object.__setattr__(self, "pi", pi)
        for k in ("beta1", "beta2", "mu1", "mu2", "Sigma"):
            object.__setattr__(self, k, np.asarray(getattr(self, k), dtype=float))
        p = self.beta1.shape[0]
        if any(getattr(self, k).shape != (p,) for k in ("beta2", "mu1", "mu2")):
            raise ValueError("beta and mu vectors must share one length")
        S = self.Sigma
        if S.shape != (p, p) or not np.allclose(S, S.T) or np.linalg.eigvalsh(S).min() <= 0:
            raise ValueError("Sigma must be symmetric positive definite")
        if self.sigma_noise <= 0:
            raise ValueError("sigma_noise must be positive")

    @property
    def p(self) -> int:
        return self.beta1.shape[0]

    @property
    def delta(self) -> float:
        return float(np.linalg.norm(self.beta1 - self.beta2))

    def second_moment(self, k: int) -> np.ndarray:
        mu = self.mu1 if k == 1 else self.mu2
        return self.Sigma + np.outer(mu, mu)

    @classmethod
    def symmetric(cls, p: int = 20, pi=(0.8, 0.2), delta: float = 4.0, shift: float = 2.0,
                  n_active: int = 4, sigma_noise: float = 1.0) -> "MixtureSpec":
        """beta2 = -beta1 on the first ``n_active`` features, mu2 = -mu1 with mu2 - mu1 = shift there.

        Symmetric means give both clusters the same second moment, the
        equal-covariance case of the theory.
        """
        b = np.zeros(p)
        b[:n_active] = delta / (2.0 * np.sqrt(n_active))
        mu = np.zeros(p)
        mu[:n_active] = shift / 2.0
        return cls(pi, b, -b, -mu, mu, np.eye(p), sigma_noise)


def gen_mixture(spec: MixtureSpec, n: int, seed: int, labels=None) -> tuple[Dataset, np.ndarray]:
    """Draw ``n`` rows; labels are 1 or 2 (or the supplied ``labels``)."""
    rng = np.random.default_rng(seed)
    if labels is None:
        z = np.where(rng.random(n) < spec.pi[0], 1, 2)
    else:
        z = np.asarray(labels, dtype=int)
        n = len(z)
    L = np.linalg.cholesky(spec.Sigma)
    X = rng.standard_normal((n, spec.p)) @ L.T + np.where(z[:, None] == 1, spec.mu1, spec.mu2)
    B = np.where(z[:, None] == 1, spec.beta1, spec.beta2)
    y = np.einsum("ij,ij->i", X, B) + spec.sigma_noise * rng.standard_normal(n)
    return Dataset.from_arrays(X, y), z


def pooled_beta_star(spec: MixtureSpec) -> np.ndarray:
    """Population least-squares coefficients (no intercept) over the mixture."""
    S1, S2 = spec.second_moment(1), spec.second_moment(2)
    p1, p2 = spec.pi
    return np.linalg.solve(p1 * S1 + p2 * S2, p1 * S1 @ spec.beta1 + p2 * S2 @ spec.beta2)


def population_mse(spec: MixtureSpec, beta) -> float:
    beta = np.asarray(beta, dtype=float)
    out = spec.sigma_noise ** 2
    for k, (pk, bk) in enumerate(zip(spec.pi, (spec.beta1, spec.beta2)), start=1):
        d = bk - beta
        out += pk * d @ spec.second_moment(k) @ d
    return float(out)


@dataclass(frozen=True, eq=False)
class TheoryReport:
    W1: float
    W2: float
    mse_lasso: float
    mse_att: float
    ratio: float
    predicted_ratio: float
    separable: bool
    beta_star: np.ndarray
    beta_lasso: np.ndarray
    lasso_distance: float
    lambda_hat: float
    W2_per_point: np.ndarray = field(repr=False)


def theory_check(spec: MixtureSpec, n: int, seed: int, temperature: float = 1.0,
                 n_test: int = 100) -> TheoryReport:
    """Monte-Carlo check of the attention-versus-lasso mixture theory.

    Fits no-intercept ridge for the diagonal attention and a no-intercept
    CV lasso on ``n`` mixture rows, then for ``n_test`` fresh cluster-1 rows
    fits the attention lasso (m = 1, shared penalty) and compares squared
    errors against the cluster-1 truth ``x' beta1``. ``W1``/``W2`` are the
    mean attention masses on the two training clusters;
    ``predicted_ratio`` is the mean of ``(W2 / pi2)**2`` over test rows.
    """
    train, z = gen_mixture(spec, n, seed)
    test, _ = gen_mixture(spec, n_test, seed + 0x9E3779B9, labels=np.ones(n_test, dtype=int))
    X, y = np.asarray(train.features), np.asarray(train.response)
    Xt = np.asarray(test.features)
    folds = make_folds(n, "k-fold", 10, seed)

    ridge, _ = ridge_cv(X, y, folds, intercept=False)
    D = np.abs(ridge.coefficients)
    att = DiagonalAttention(D)
    sep = bool(spec.mu1 @ (D * spec.mu1) > spec.mu1 @ (D * spec.mu2)
               and spec.mu2 @ (D * spec.mu2) > spec.mu2 @ (D * spec.mu1))
    A = softmax_rows(ridge_diag_scores(Xt, X, att), temperature).weights
    W2 = A[:, z == 2].sum(axis=1)

    lasso, lam = lasso_cv(X, y, folds, intercept=False)
    err_l = (Xt @ (lasso.coefficients - spec.beta1)) ** 2
    err_a = np.empty(n_test)
    for i in range(n_test):
        m = weighted_lasso_fit(X, y, A[i], lam, intercept=False, warm_start=lasso)
        err_a[i] = (Xt[i] @ (m.coefficients - spec.beta1)) ** 2
    mse_l, mse_a = float(err_l.mean()), float(err_a.mean())
    bstar = pooled_beta_star(spec)
    return TheoryReport(float(1 - W2.mean()), float(W2.mean()), mse_l, mse_a, mse_a / mse_l,
                        float(np.mean((W2 / spec.pi[1]) ** 2)), sep, bstar, lasso.coefficients,
                        float(np.linalg.norm(lasso.coefficients - bstar)), float(lam), W2)


# --------------------------------------------------------------------------
# drift
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DriftScenario:
    """Three time points whose share of shifted (B) rows grows over time."""

    p: int = 50
    n_nonzero: int = 20
    beta_value: float = 2.0
    mixB: tuple = (0.10, 0.90, 0.95)
    shift: float = 2.0
    shift_features: tuple = (5, 6, 7, 8, 9)
    sigma: float = 36.0
    n_train: int = 300
    n_test: int = 200

    def __post_init__(self):
        if len(self.mixB) != 3 or not all(0 <= v <= 1 for v in self.mixB):
            raise ValueError("mixB needs three fractions in [0, 1]")
        if self.n_nonzero > self.p or max(self.shift_features) >= self.p or self.p < 5:
            raise ValueError("scenario dimensions are inconsistent")


def drift_signal(X, beta) -> np.ndarray:
    """Noiseless response ``X beta + x1^2 - x3^2 + (x4 + x5)^2``."""
    X = np.asarray(X, dtype=float)
    return X @ beta + X[:, 0] ** 2 - X[:, 2] ** 2 + (X[:, 3] + X[:, 4]) ** 2


@dataclass(frozen=True, eq=False)
class DriftDraw:
    d1: Dataset
    d2: Dataset
    d3: Dataset
    d1_test: Dataset
    beta: np.ndarray


def gen_drift_full(scenario: DriftScenario, seed: int) -> DriftDraw:
    """All data for one drift replication.

    Times 1 and 2 have ``n_train`` rows; time 3 and a held-out time-1 set
    have ``n_test``. Each row is a B row with probability ``mixB[t]``; B
    rows have mean ``shift`` on ``shift_features``. The nonzero
    coefficients are random signs times ``beta_value`` on a random support.
    """
    rng = np.random.default_rng(seed)
    p = scenario.p
    beta = np.zeros(p)
    support = rng.choice(p, size=scenario.n_nonzero, replace=False)
    beta[support] = scenario.beta_value * rng.choice([-1.0, 1.0], size=scenario.n_nonzero)
    out = []
    for t, n in ((0, scenario.n_train), (1, scenario.n_train), (2, scenario.n_test), (0, scenario.n_test)):
        X = rng.standard_normal((n, p))
        is_b = rng.random(n) < scenario.mixB[t]
        X[np.ix_(is_b, list(scenario.shift_features))] += scenario.shift
        y = drift_signal(X, beta) + scenario.sigma * rng.standard_normal(n)
        out.append(Dataset.from_arrays(X, y))
    return DriftDraw(*out, beta)


def gen_drift(scenario: DriftScenario, seed: int) -> tuple[Dataset, Dataset, Dataset]:
    """Datasets at times 1, 2 and 3 (see :func:`gen_drift_full`)."""
    d = gen_drift_full(scenario, seed)
    return d.d1, d.d2, d.d3
