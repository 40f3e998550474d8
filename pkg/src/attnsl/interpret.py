"""Interpreting per-point models by clustering them.

Each test row has its own blended linear model (or, for boosted trees, its
own feature-importance profile). Clustering those vectors with minimax
linkage groups rows that share a model and gives every group a prototype
row that is an actual member.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .pipeline import PipelineResult

__all__ = [
    "CoefficientMatrix",
    "Merge",
    "Dendrogram",
    "ClusterAssignment",
    "ClusterSummary",
    "blended_coefficients",
    "protoclust",
    "cut_clusters",
    "cluster_summary",
    "summarize_clusters",
    "cluster_importances",
    "ImportanceClusters",
    "write_heatmap_csv",
    "write_dendrogram_json",
    "write_summary_csv",
    "DEFAULT_K",
]

DEFAULT_K = 4


@dataclass(frozen=True, eq=False)
class CoefficientMatrix:
    """Intercept-first coefficients, one row per test observation."""

    values: np.ndarray
    feature_names: tuple = ()
    row_ids: tuple = ()

    def __post_init__(self):
        V = np.asarray(self.values, dtype=float)
        if V.ndim != 2 or not np.isfinite(V).all():
            raise ValueError("coefficient matrix must be 2-D and finite")
        n, q = V.shape
        names = tuple(self.feature_names) or tuple(f"x{j + 1}" for j in range(q - 1))
        if len(names) != q - 1:
            raise ValueError(f"{len(names)} feature names for {q - 1} coefficient columns")
        ids = tuple(str(r) for r in self.row_ids) or tuple(str(i) for i in range(n))
        object.__setattr__(self, "values", V)
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "row_ids", ids)

    @property
    def columns(self) -> tuple:
        return ("intercept", *self.feature_names)


@dataclass(frozen=True)
class Merge:
    left: int
    right: int
    height: float
    prototype: int
    size: int


@dataclass(frozen=True, eq=False)
class Dendrogram:
    """Agglomeration record.

    Leaves are clusters ``0..n-1``; merge ``t`` creates cluster ``n + t``.
    ``left`` is the child whose smallest member index is lower.
    ``inversions`` lists merges whose height is below the previous one.
    """

    n: int
    merges: tuple
    order: tuple

    @property
    def heights(self) -> np.ndarray:
        return np.array([m.height for m in self.merges])

    @property
    def prototypes(self) -> np.ndarray:
        return np.array([m.prototype for m in self.merges], dtype=int)

    @property
    def inversions(self) -> tuple:
        h = self.heights
        return tuple(int(t) for t in np.flatnonzero(np.diff(h) < 0) + 1)

    def members(self, cluster: int) -> np.ndarray:
        out, stack = [], [cluster]
        while stack:
            c = stack.pop()
            if c < self.n:
                out.append(c)
            else:
                m = self.merges[c - self.n]
                stack += [m.left, m.right]
        return np.sort(np.array(out, dtype=int))

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "merges": [{"left": m.left, "right": m.right, "height": m.height,
                        "prototype": m.prototype, "size": m.size} for m in self.merges],
            "heights": self.heights.tolist(),
            "prototypes": self.prototypes.tolist(),
            "order": list(self.order),
            "inversions": list(self.inversions),
        }


@dataclass(frozen=True, eq=False)
class ClusterAssignment:
    """``labels[i]`` is the cluster of point ``i``; clusters are numbered by smallest member."""

    labels: np.ndarray
    prototypes: np.ndarray
    nodes: np.ndarray

    @property
    def k(self) -> int:
        return len(self.prototypes)

    def members(self, c: int) -> np.ndarray:
        return np.flatnonzero(self.labels == c)


@dataclass(frozen=True, eq=False)
class ClusterSummary:
    cluster: int
    size: int
    prototype: int
    prototype_row_id: str
    mean_coefficients: np.ndarray
    pse_base: float
    pse_blend: float


def blended_coefficients(result: PipelineResult, row_ids=()) -> CoefficientMatrix:
    """Per-row ``(1 - m) * base + m * attention`` coefficients of a lasso pipeline."""
    if result.attn_coefficients is None:
        raise ValueError("blended coefficients need a lasso pipeline; use cluster_importances for trees")
    return CoefficientMatrix(result.blended_coefficients, result.feature_names, row_ids)


def _distances(P: np.ndarray) -> np.ndarray:
    """Euclidean distances from explicit differences (no Gram-matrix shortcut)."""
    D = np.empty((P.shape[0], P.shape[0]))
    for i in range(P.shape[0]):
        D[i] = np.sqrt(((P - P[i]) ** 2).sum(axis=1))
    return D


def protoclust(points, distance: str = "euclidean") -> Dendrogram:
    """Minimax-linkage agglomerative clustering.

    The distance between clusters ``G`` and ``H`` is the smallest radius
    ``min_c max_x d(c, x)`` with ``c`` and ``x`` ranging over ``G | H``; the
    minimizing ``c`` is the merged cluster's prototype. Each step merges the
    closest pair. Ties go to the pair with the smallest member indices
    (compared lexicographically) and the prototype with the lowest index.
    """
    if distance != "euclidean":
        raise ValueError(f"unsupported distance {distance!r}")
    P = np.asarray(points, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    n = P.shape[0]
    if n < 2:
        raise ValueError("protoclust needs at least two points")
    if not np.isfinite(P).all():
        raise ValueError("points must be finite")
    D = _distances(P)

    # M[c, k]: distance from point c to the farthest member of active cluster k
    # slots are indexed by cluster representative (smallest member)
    M = D.copy()
    label = np.arange(n)          # slot of each point
    node = np.arange(n)           # dendrogram node id held by each slot
    active = np.ones(n, dtype=bool)
    inf = np.inf

    def link(a, b):
        """Linkage of slots a and b, with its prototype."""
        cand = np.flatnonzero((label == a) | (label == b))
        r = np.maximum(M[cand, a], M[cand, b])
        j = int(np.argmin(r))
        return r[j], int(cand[j])

    # pairwise linkage of the current clusters; upper triangle a < b
    L = np.full((n, n), inf)
    proto = np.zeros((n, n), dtype=int)
    iu, ju = np.triu_indices(n, 1)
    L[iu, ju] = D[iu, ju]
    proto[iu, ju] = iu

    merges = []
    for t in range(n - 1):
        k = int(np.argmin(L))   # row-major: smallest a, then smallest b among ties
        a, b = divmod(k, n)
        h, c = float(L[a, b]), int(proto[a, b])
        size = int(((label == a) | (label == b)).sum())
        merges.append(Merge(int(node[a]), int(node[b]), h, c, size))
        # b joins slot a (a < b keeps the smallest member as representative)
        label[label == b] = a
        active[b] = False
        M[:, a] = np.maximum(M[:, a], M[:, b])
        L[b, :] = inf
        L[:, b] = inf
        node[a] = n + t
        for o in np.flatnonzero(active):
            if o == a:
                continue
            x, y = (o, a) if o < a else (a, o)
            L[x, y], proto[x, y] = link(x, y)

    order = _leaf_order(n, merges)
    return Dendrogram(n, tuple(merges), order)


def _leaf_order(n, merges) -> tuple:
    root = n + len(merges) - 1
    out, stack = [], [root]
    while stack:
        c = stack.pop()
        if c < n:
            out.append(c)
        else:
            m = merges[c - n]
            stack += [m.right, m.left]
    return tuple(out)


def cut_clusters(dendrogram: Dendrogram, K: int) -> ClusterAssignment:
    """Clusters left after undoing the last ``K - 1`` merges."""
    n = dendrogram.n
    if not 1 <= K <= n:
        raise ValueError(f"K must lie in [1, {n}], got {K}")
    done = n - K
    alive = set(range(n))
    for t in range(done):
        m = dendrogram.merges[t]
        alive -= {m.left, m.right}
        alive.add(n + t)
    nodes = sorted(alive, key=lambda c: dendrogram.members(c)[0])
    labels = np.empty(n, dtype=int)
    protos = np.empty(K, dtype=int)
    for k, c in enumerate(nodes):
        labels[dendrogram.members(c)] = k
        protos[k] = c if c < n else dendrogram.merges[c - n].prototype
    return ClusterAssignment(labels, protos, np.array(nodes, dtype=int))


def _pse(y, yhat) -> float:
    return float(np.mean((np.asarray(y) - np.asarray(yhat)) ** 2))


def summarize_clusters(assignment: ClusterAssignment, values, y_test, y_base, y_blend,
                       row_ids=()) -> list[ClusterSummary]:
    """Array form of :func:`cluster_summary`; a missing ``y_test`` gives NaN PSEs."""
    V = np.asarray(values, dtype=float)
    n = V.shape[0]
    if assignment.labels.shape != (n,):
        raise ValueError("the assignment must cover every row")
    yb, yf = np.asarray(y_base, dtype=float), np.asarray(y_blend, dtype=float)
    y = np.full(n, np.nan) if y_test is None else np.asarray(y_test, dtype=float)
    if y.shape != (n,) or yb.shape != (n,) or yf.shape != (n,):
        raise ValueError("responses and predictions must cover every row")
    ids = tuple(row_ids) or tuple(str(i) for i in range(n))
    out = []
    for k in range(assignment.k):
        idx = assignment.members(k)
        if idx.size == 0:
            raise ValueError(f"cluster {k} is empty")
        pr = int(assignment.prototypes[k])
        out.append(ClusterSummary(k, int(idx.size), pr, ids[pr], V[idx].mean(axis=0),
                                  _pse(y[idx], yb[idx]), _pse(y[idx], yf[idx])))
    return out


def cluster_summary(assignment: ClusterAssignment, result: PipelineResult, y_test,
                    values=None, row_ids=()) -> list[ClusterSummary]:
    """Per-cluster size, prototype, mean profile and baseline / blended PSE.

    ``values`` is the matrix that was clustered; it defaults to the blended
    coefficients (lasso) or the per-point importances (boosted trees).
    """
    if values is None:
        values = result.blended_coefficients if result.attn_coefficients is not None else result.importances
    if values is None:
        raise ValueError("no per-point coefficients or importances to summarize")
    if y_test is None:
        raise ValueError("cluster_summary needs the test responses")
    return summarize_clusters(assignment, values, y_test, result.y_base, result.y_blend, row_ids)


@dataclass(frozen=True, eq=False)
class ImportanceClusters:
    importances: np.ndarray
    dendrogram: Dendrogram
    assignment: ClusterAssignment
    cluster_means: np.ndarray


def cluster_importances(result: PipelineResult, K: int = DEFAULT_K) -> ImportanceClusters:
    """Cluster the per-point feature importances of a boosted-tree attention fit.

    Each row of ``result.importances`` is the gain attributed to every feature
    across that point's weighted ensemble, normalized to sum to one.
    """
    if result.config.approximate or result.importances is None:
        raise ValueError("per-point importances need a non-approximate gbt pipeline")
    imp = np.asarray(result.importances, dtype=float)
    dend = protoclust(imp)
    assign = cut_clusters(dend, min(K, imp.shape[0]))
    means = np.array([imp[assign.members(k)].mean(axis=0) for k in range(assign.k)])
    return ImportanceClusters(imp, dend, assign, means)


def write_heatmap_csv(path, values, assignment: ClusterAssignment, dendrogram: Dendrogram,
                      columns, row_ids=()) -> None:
    """Long format ``cluster,row_id,feature,value``; rows follow the dendrogram leaf order."""
    V = np.asarray(values, dtype=float)
    ids = tuple(row_ids) or tuple(str(i) for i in range(V.shape[0]))
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write("cluster,row_id,feature,value\n")
        for i in dendrogram.order:
            k = int(assignment.labels[i])
            fh.writelines(f"{k},{ids[i]},{c},{float(V[i, j])!r}\n" for j, c in enumerate(columns))


def write_dendrogram_json(path, dendrogram: Dendrogram, row_ids=()) -> None:
    d = dendrogram.to_dict()
    if row_ids:
        d["row_ids"] = list(row_ids)
    Path(path).write_text(json.dumps(d, indent=1), encoding="utf-8")


def write_summary_csv(path, summaries, columns) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(",".join(["cluster", "size", "prototype_row_id", "pse_base", "pse_blend",
                           *(f"mean_{c}" for c in columns)]) + "\n")
        for s in summaries:
            cells = [str(s.cluster), str(s.size), s.prototype_row_id, repr(float(s.pse_base)), repr(float(s.pse_blend)),
                     *(repr(float(v)) for v in s.mean_coefficients)]
            fh.write(",".join(cells) + "\n")
