"""Context features: time-series lags and spatial neighbours.

Similarity between observations can depend on their surroundings as well
as their own values. For ordered data this means lagged copies of each
variable; for image data the values of the adjacent pixels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import DataError, Dataset

__all__ = [
    "LagSpec",
    "NeighborSpec",
    "lag_features",
    "lag_context",
    "neighbor_features",
    "NEIGHBOR_ORDER",
]

# (name, d_row, d_col) in output column order
NEIGHBOR_ORDER = (
    ("NW", -1, -1), ("N", -1, 0), ("NE", -1, 1),
    ("W", 0, -1), ("E", 0, 1),
    ("SW", 1, -1), ("S", 1, 0), ("SE", 1, 1),
)
_ROOK = ("N", "W", "E", "S")


@dataclass(frozen=True)
class LagSpec:
    """Lag layout for ordered rows.

    ``similarity_lag`` is how many of the ``max_lag`` lags feed the
    similarity (proximity) features; the fitted models never see lags.
    """

    max_lag: int
    include_response_lags: bool = True
    similarity_lag: int = 0

    def __post_init__(self):
        if self.max_lag < 0:
            raise ValueError("max_lag must be >= 0")
        if not 0 <= self.similarity_lag <= self.max_lag:
            raise ValueError(f"similarity_lag must lie in [0, {self.max_lag}], got {self.similarity_lag}")


@dataclass(frozen=True)
class NeighborSpec:
    """Pixel adjacency. ``neighborhood`` is 8 (3x3 block) or 4 (edge-sharing only).

    ``grid_shape=None`` infers each image's shape from its largest coordinates.
    """

    neighborhood: int = 8
    aggregation: str = "mean_sd"
    grid_shape: tuple[int, int] | None = None

    def __post_init__(self):
        if self.neighborhood not in (4, 8):
            raise ValueError(f"neighborhood must be 4 or 8, got {self.neighborhood}")
        if self.aggregation not in ("raw", "mean_sd"):
            raise ValueError(f"aggregation must be raw or mean_sd, got {self.aggregation!r}")
        if self.grid_shape is not None:
            r, c = self.grid_shape
            if r < 1 or c < 1:
                raise ValueError("grid_shape entries must be positive")
            object.__setattr__(self, "grid_shape", (int(r), int(c)))

    @property
    def offsets(self):
        if self.neighborhood == 8:
            return NEIGHBOR_ORDER
        return tuple(o for o in NEIGHBOR_ORDER if o[0] in _ROOK)


def _lag_block(v: np.ndarray, L: int) -> np.ndarray:
    """Columns v[t-1], ..., v[t-L] for t = L..n-1."""
    n = len(v)
    return np.column_stack([v[L - k:n - k] for k in range(1, L + 1)])


def lag_features(data: Dataset, spec: LagSpec, response_name: str = "y") -> tuple[Dataset, int]:
    """Append lagged copies of every variable; drop the first ``max_lag`` rows.

    Columns ``<var>_lag1 .. <var>_lagL`` follow the current features, one
    block per variable in column order, then ``<response_name>_lag1..L``
    when response lags are included. Returns the new dataset and the number
    of dropped rows.
    """
    L = spec.max_lag
    if L >= data.n:
        raise DataError(f"max_lag {L} must be smaller than the row count {data.n}")
    if L == 0:
        return data, 0
    X, y = data.features, data.response
    blocks = [X[L:]]
    names = list(data.feature_names)
    for j, name in enumerate(data.feature_names):
        blocks.append(_lag_block(X[:, j], L))
        names += [f"{name}_lag{k}" for k in range(1, L + 1)]
    if spec.include_response_lags:
        blocks.append(_lag_block(y, L))
        names += [f"{response_name}_lag{k}" for k in range(1, L + 1)]
    out = Dataset(np.hstack(blocks), y[L:], tuple(names), data.row_ids[L:])
    return out, L


def lag_context(data: Dataset, spec: LagSpec, response_name: str = "y") -> tuple[Dataset, np.ndarray]:
    """Model data and similarity features for ordered rows.

    The model dataset keeps only the original columns (rows aligned with the
    lagged table); the similarity matrix holds the current values plus lags
    ``1..similarity_lag`` of each variable (and of the response if flagged).
    """
    lagged, L = lag_features(data, spec, response_name)
    model = Dataset(data.features[L:], data.response[L:], data.feature_names, data.row_ids[L:])
    names = lagged.feature_names
    keep = set(data.feature_names)
    bases = list(data.feature_names) + ([response_name] if spec.include_response_lags else [])
    keep |= {f"{b}_lag{k}" for b in bases for k in range(1, spec.similarity_lag + 1)}
    cols = [j for j, c in enumerate(names) if c in keep]
    return model, lagged.features[:, cols]


def _coords(pixels: Dataset, coord_names):
    try:
        idx = [pixels.feature_names.index(c) for c in coord_names]
    except ValueError:
        raise DataError(f"pixel table needs coordinate columns {list(coord_names)}") from None
    C = pixels.features[:, idx]
    if np.isnan(C).any() or (C != np.round(C)).any():
        raise DataError("pixel coordinates must be integers")
    feat = [j for j in range(pixels.p) if j not in idx]
    return C.astype(np.int64), feat


def neighbor_features(pixels: Dataset, spec: NeighborSpec,
                      coord_names=("image_id", "row", "col")) -> Dataset:
    """Append neighbour context to every pixel.

    ``pixels`` carries integer columns ``image_id, row, col``; the remaining
    columns are the pixel features. The result has those features (no
    coordinates) followed by, in raw mode, one block per neighbour direction
    in NW, N, NE, W, E, SW, S, SE order (a neighbour outside the image or
    absent from the table takes the pixel's own value), or in mean_sd mode
    the mean and population sd over the neighbours that exist. Neighbours
    are only searched within the same image.
    """
    C, feat = _coords(pixels, coord_names)
    X = pixels.features[:, feat]
    names = [pixels.feature_names[j] for j in feat]
    n, p = X.shape
    offsets = spec.offsets
    raw = spec.aggregation == "raw"
    out = np.empty((n, len(offsets) * p if raw else 2 * p))

    for img in np.unique(C[:, 0]):
        sel = np.flatnonzero(C[:, 0] == img)
        r, c = C[sel, 1], C[sel, 2]
        if spec.grid_shape is not None:
            R, K = spec.grid_shape
        else:
            R, K = int(r.max()) + 1, int(c.max()) + 1
        if (r < 0).any() or (c < 0).any() or (r >= R).any() or (c >= K).any():
            raise DataError(f"image {img}: pixel coordinates outside the {R}x{K} grid")
        # padded grid; NaN marks cells with no pixel
        G = np.full((R + 2, K + 2, p), np.nan)
        present = np.zeros((R + 2, K + 2), dtype=bool)
        if len(np.unique(r * K + c)) != len(sel):
            raise DataError(f"image {img}: duplicate pixel coordinates")
        G[r + 1, c + 1] = X[sel]
        present[r + 1, c + 1] = True
        nb = np.stack([G[r + 1 + dr, c + 1 + dc] for _, dr, dc in offsets], axis=1)  # (m, k, p)
        ok = np.stack([present[r + 1 + dr, c + 1 + dc] for _, dr, dc in offsets], axis=1)
        if raw:
            nb = np.where(ok[:, :, None], nb, X[sel][:, None, :])
            out[sel] = nb.reshape(len(sel), -1)
        else:
            cnt = ok.sum(axis=1)[:, None]
            s = np.where(ok[:, :, None], nb, 0.0)
            mean = np.where(cnt > 0, s.sum(axis=1) / np.maximum(cnt, 1), X[sel])
            dev = np.where(ok[:, :, None], nb - mean[:, None, :], 0.0)
            sd = np.sqrt((dev ** 2).sum(axis=1) / np.maximum(cnt, 1))
            out[sel, :p] = mean
            out[sel, p:] = sd

    if raw:
        new = [f"{f}_{d}" for d, _, _ in offsets for f in names]
    else:
        new = [f"{f}_nbr_mean" for f in names] + [f"{f}_nbr_sd" for f in names]
    return Dataset(np.hstack([X, out]), pixels.response, tuple(names + new), pixels.row_ids)
