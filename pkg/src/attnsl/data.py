"""Tabular datasets: CSV ingestion, imputation, standardization and fold plans.

Missing feature cells are carried as NaN from load time until
:func:`impute_train_means` fills them; every fitting routine downstream
expects a fully imputed matrix.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "DataError",
    "Dataset",
    "StandardizationParams",
    "FoldPlan",
    "load_csv",
    "write_csv",
    "impute_train_means",
    "make_folds",
    "standardize",
    "apply_standardization",
    "invert_standardization",
    "derive_seed",
]


class DataError(ValueError):
    """Raised for malformed input data (files, columns, shapes)."""


def derive_seed(*keys: int) -> int:
    """Derive a 32-bit child seed from a tuple of integers.

    Used wherever a seed must be split deterministically (per tree,
    per replication, per fold plan) so that adding work in one place
    never perturbs random streams elsewhere.
    """
    return int(np.random.SeedSequence([int(k) & 0xFFFFFFFF for k in keys]).generate_state(1)[0])


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    response: np.ndarray
    feature_names: tuple[str, ...]
    row_ids: tuple[str, ...] = ()

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        y = np.asarray(self.response, dtype=float)
        if X.ndim != 2:
            raise DataError(f"features must be 2-D, got shape {X.shape}")
        if y.shape != (X.shape[0],):
            raise DataError(f"response length {y.shape} does not match {X.shape[0]} rows")
        names = tuple(str(s) for s in self.feature_names)
        if len(names) != X.shape[1]:
            raise DataError(f"{len(names)} feature names for {X.shape[1]} columns")
        ids = tuple(str(r) for r in self.row_ids) or tuple(str(i) for i in range(X.shape[0]))
        if len(ids) != X.shape[0]:
            raise DataError("row_ids length does not match row count")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "response", y)
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "row_ids", ids)

    @classmethod
    def from_arrays(cls, X, y, feature_names: Sequence[str] | None = None,
                    row_ids: Sequence | None = None) -> "Dataset":
        X = np.asarray(X, dtype=float)
        if feature_names is None:
            feature_names = [f"x{j + 1}" for j in range(X.shape[1])]
        return cls(X, np.asarray(y, dtype=float), tuple(feature_names),
                   tuple(row_ids) if row_ids is not None else ())

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    @property
    def missing_mask(self) -> np.ndarray:
        return np.isnan(self.features)

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        if rows.dtype == bool:
            rows = np.flatnonzero(rows)
        return Dataset(self.features[rows], self.response[rows], self.feature_names,
                       tuple(self.row_ids[i] for i in rows))

    def select_columns(self, names: Sequence[str]) -> "Dataset":
        idx = [self.feature_names.index(c) for c in names]
        return replace(self, features=self.features[:, idx], feature_names=tuple(names))


def _parse_float(cell: str) -> float:
    cell = cell.strip()
    if cell == "":
        return math.nan
    try:
        return float(cell)
    except ValueError:
        return math.nan


def load_csv(path, response_column: str, id_column: str | None = "row_id",
             exclude: Sequence[str] = ()) -> Dataset:
    """Read a header-first, comma-separated UTF-8 file into a :class:`Dataset`.

    Empty or non-numeric feature cells become NaN. The response column must
    be fully numeric. If ``id_column`` is present in the header it supplies
    the row identifiers and is not treated as a feature; columns listed in
    ``exclude`` are dropped.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = [r for r in reader if r]
    dupes = sorted({h for h in header if header.count(h) > 1})
    if dupes:
        raise DataError(f"{path}: duplicate column names {dupes}")
    if response_column not in header:
        raise DataError(f"{path}: response column {response_column!r} not found")
    for i, r in enumerate(rows):
        if len(r) != len(header):
            raise DataError(f"{path}: row {i + 2} has {len(r)} fields, expected {len(header)}")

    y_col = header.index(response_column)
    id_col = header.index(id_column) if id_column and id_column in header else None
    skip = {y_col, id_col} | {header.index(c) for c in exclude if c in header}
    feat_cols = [j for j in range(len(header)) if j not in skip]

    y = np.empty(len(rows))
    for i, r in enumerate(rows):
        try:
            y[i] = float(r[y_col])
        except ValueError:
            raise DataError(f"{path}: non-numeric response {r[y_col]!r} "
                            f"in column {response_column!r}, row {i + 2}") from None
    X = np.array([[_parse_float(r[j]) for j in feat_cols] for r in rows], dtype=float)
    X = X.reshape(len(rows), len(feat_cols))
    ids = tuple(r[id_col] for r in rows) if id_col is not None else ()
    return Dataset(X, y, tuple(header[j] for j in feat_cols), ids)


def _fmt(v: float) -> str:
    return "" if math.isnan(v) else repr(float(v))


def write_csv(data: Dataset, path, response_column: str = "y", with_ids: bool = False) -> None:
    """Write ``data`` so that :func:`load_csv` reads back identical values.

    Floats use ``repr`` (shortest round-tripping form) and NaN becomes an
    empty field.
    """
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        head = (["row_id"] if with_ids else []) + list(data.feature_names) + [response_column]
        w.writerow(head)
        for i in range(data.n):
            row = [_fmt(v) for v in data.features[i]] + [_fmt(data.response[i])]
            w.writerow(([data.row_ids[i]] if with_ids else []) + row)


def impute_train_means(train: Dataset, others: Sequence[Dataset] = ()) -> tuple[Dataset, list[Dataset]]:
    """Fill NaN cells with the column means of the non-missing training values.

    Only ``train`` contributes to the means; ``others`` (test sets, folds)
    are filled with the same values.
    """
    X = train.features
    observed = ~np.isnan(X)
    empty = np.flatnonzero(observed.sum(axis=0) == 0)
    if empty.size:
        names = [train.feature_names[j] for j in empty]
        raise DataError(f"training columns entirely missing: {names}")
    means = np.where(observed, X, 0.0).sum(axis=0) / observed.sum(axis=0)

    def fill(d: Dataset) -> Dataset:
        if not np.isnan(d.features).any():
            return d
        return replace(d, features=np.where(np.isnan(d.features), means, d.features))

    return fill(train), [fill(d) for d in others]


@dataclass(frozen=True)
class StandardizationParams:
    means: np.ndarray
    sds: np.ndarray


def standardize(X) -> tuple[np.ndarray, StandardizationParams]:
    """Center and scale columns using the population (divide-by-n) sd.

    A constant column keeps sd 1, so it maps to all zeros.
    """
    X = np.asarray(X, dtype=float)
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    params = StandardizationParams(mu, sd)
    return apply_standardization(params, X), params


def apply_standardization(params: StandardizationParams, X) -> np.ndarray:
    return (np.asarray(X, dtype=float) - params.means) / params.sds


def invert_standardization(params: StandardizationParams, Z) -> np.ndarray:
    return np.asarray(Z, dtype=float) * params.sds + params.means


FOLD_KINDS = ("random-split", "k-fold", "expanding-window")


@dataclass(frozen=True)
class FoldPlan:
    """Row-to-fold assignment.

    ``assignments`` holds a fold index in ``0..k-1`` per row. For
    ``random-split`` the two folds are 0 = train and 1 = test.
    """

    kind: str
    assignments: np.ndarray
    seed: int
    k: int = field(default=0)

    def __post_init__(self):
        if self.kind not in FOLD_KINDS:
            raise DataError(f"unknown fold kind {self.kind!r}")
        a = np.asarray(self.assignments, dtype=int)
        a.setflags(write=False)
        object.__setattr__(self, "assignments", a)
        if not self.k:
            object.__setattr__(self, "k", int(a.max()) + 1 if a.size else 0)

    def splits(self):
        """Yield ``(train_idx, test_idx)`` pairs in fold order.

        k-fold yields one pair per fold; expanding-window yields folds
        2..k, each training on every earlier fold; random-split yields a
        single pair.
        """
        a = self.assignments
        if self.kind == "random-split":
            yield np.flatnonzero(a == 0), np.flatnonzero(a == 1)
        elif self.kind == "k-fold":
            for f in range(self.k):
                yield np.flatnonzero(a != f), np.flatnonzero(a == f)
        else:
            for f in range(1, self.k):
                yield np.flatnonzero(a < f), np.flatnonzero(a == f)

    def to_csv(self, path, row_ids: Sequence[str] | None = None) -> None:
        ids = row_ids if row_ids is not None else [str(i) for i in range(len(self.assignments))]
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["row_id", "fold"])
            for rid, f in zip(ids, self.assignments):
                w.writerow([rid, int(f)])


def make_folds(n: int, kind: str, k: int, seed: int = 0, train_fraction: float = 0.5) -> FoldPlan:
    """Build a deterministic :class:`FoldPlan` over ``n`` rows.

    k-fold shuffles rows with a seeded permutation and deals them into
    ``k`` folds whose sizes differ by at most one. Expanding-window keeps
    row order and cuts it into ``k`` contiguous blocks. Random-split puts
    ``round(train_fraction * n)`` shuffled rows in fold 0 and the rest in
    fold 1 (``k`` is ignored but must still be valid).
    """
    if k < 2:
        raise DataError(f"need k >= 2 folds, got {k}")
    if k > n:
        raise DataError(f"cannot make {k} folds from {n} rows")
    rng = np.random.default_rng(seed)
    if kind == "k-fold":
        perm = rng.permutation(n)
        a = np.empty(n, dtype=int)
        a[perm] = np.arange(n) % k
        return FoldPlan(kind, a, seed, k)
    if kind == "expanding-window":
        a = np.repeat(np.arange(k), np.diff(np.linspace(0, n, k + 1).round().astype(int)))
        return FoldPlan(kind, a, seed, k)
    if kind == "random-split":
        n_train = int(round(train_fraction * n))
        if not 0 < n_train < n:
            raise DataError(f"train_fraction {train_fraction} leaves an empty side")
        a = np.ones(n, dtype=int)
        a[rng.permutation(n)[:n_train]] = 0
        return FoldPlan(kind, a, seed, 2)
    raise DataError(f"unknown fold kind {kind!r}")
