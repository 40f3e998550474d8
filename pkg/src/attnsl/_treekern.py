"""Numba kernels for growing and routing regression trees.

A tree lives in flat node arrays: ``feat`` (-1 at leaves), ``thr``,
``left``, ``right``, ``value``, ``gain`` and, for every node, the slice
``[start, end)`` of ``rows`` holding the training rows that reached it.
Rows are partitioned in place, so a leaf's slice is exactly its training
rows. ``fw`` holds the fitting weight stored next to each row (bootstrap
count for forests, observation weight for boosting).
"""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _node_split(XT, t, w, cnt, rows, start, end, feats, nf, min_split, min_leaf,
                xorder, xsorted, node_of, node, sv, tc, wv, cv, ridx):
    """Best variance-reduction split of rows[start:end] over feats[:nf].

    Features are tried in ascending index order and thresholds in ascending
    order; a candidate replaces the incumbent only if strictly better, so
    ties resolve to the lowest feature and then the lowest threshold.
    ``XT`` is the feature-major copy of X. Large nodes read each feature's
    order from the presorted ``xorder``/``xsorted`` (rows whose ``node_of``
    equals ``node``); small nodes sort directly.
    Both paths visit distinct values in the same order, so the chosen
    split does not depend on which one runs. ``sv``, ``tc``, ``wv``,
    ``cv`` and ``ridx`` are scratch buffers of at least ``end - start``.
    """
    m = end - start
    best_gain = 0.0
    best_f = -1
    best_thr = 0.0
    if m < 2:
        return best_gain, best_f, best_thr
    W = 0.0
    S = 0.0
    C = 0
    tmin = t[rows[start]]
    tmax = tmin
    for k in range(start, end):
        r = rows[k]
        W += w[r]
        S += w[r] * t[r]
        C += cnt[r]
        if t[r] < tmin:
            tmin = t[r]
        if t[r] > tmax:
            tmax = t[r]
    if tmin == tmax or W <= 0.0 or C < min_split or C < 2 * min_leaf:
        return best_gain, best_f, best_thr
    mean = S / W
    sse = 0.0
    for k in range(start, end):
        r = rows[k]
        sse += w[r] * (t[r] - mean) ** 2
    floor = 1e-14 * sse
    n_all = xorder.shape[1]
    use_scan = m * m >= 4 * n_all
    for fi in range(nf):
        f = feats[fi]
        if use_scan:
            k = 0
            for q in range(n_all):
                r = xorder[f, q]
                if node_of[r] == node:
                    sv[k] = xsorted[f, q]
                    ridx[k] = r
                    k += 1
        else:
            # stable insertion sort; nodes on this path are small
            for k in range(m):
                r = rows[start + k]
                v = XT[f, r]
                j = k
                while j > 0 and sv[j - 1] > v:
                    sv[j] = sv[j - 1]
                    ridx[j] = ridx[j - 1]
                    j -= 1
                sv[j] = v
                ridx[j] = r
        for k in range(m):
            r = ridx[k]
            tc[k] = t[r] - mean
            wv[k] = w[r]
            cv[k] = cnt[r]
        wl = 0.0
        sl = 0.0
        cl = 0
        for k in range(m - 1):
            wl += wv[k]
            sl += wv[k] * tc[k]
            cl += cv[k]
            a = sv[k]
            b = sv[k + 1]
            if a == b:
                continue
            if cl < min_leaf or C - cl < min_leaf:
                continue
            wr = W - wl
            if wl <= 0.0 or wr <= 0.0:
                continue
            # centered sums: right-side sum is -sl
            g = sl * sl / wl + sl * sl / wr
            if g > best_gain and g > floor:
                best_gain = g
                best_f = f
                thr = 0.5 * (a + b)
                if thr <= a:
                    thr = b
                best_thr = thr
    return best_gain, best_f, best_thr


@njit(cache=True, nogil=True)
def _draw_features(p, mtry, feats):
    for j in range(p):
        feats[j] = j
    if mtry < p:
        for j in range(mtry):
            k = j + np.random.randint(0, p - j)
            tmp = feats[j]
            feats[j] = feats[k]
            feats[k] = tmp
        feats[:mtry] = np.sort(feats[:mtry])
    return mtry if mtry < p else p


@njit(cache=True, nogil=True)
def grow_tree(XT, t, w, cnt, rows, mtry, min_split, min_leaf, max_leaves, max_depth,
              feat, thr, left, right, value, gain, start, end, xorder, xsorted, node_of):
    """Grow one tree best-first; returns the node count.

    A node is split only if its row count (``cnt`` summed) is at least
    ``min_split`` and both children keep at least ``min_leaf``.

    ``rows`` (training rows reaching the root) is permuted in place.
    Node arrays must hold at least ``2 * len(rows) - 1`` entries. The node
    with the largest pending gain is split next, so a ``max_leaves`` cap
    yields the leaf-wise tree; without a cap every splittable node is split.
    ``max_depth < 0`` means unlimited. ``XT`` is X transposed (contiguous),
    ``xorder`` the per-feature argsort of all rows of X and ``xsorted`` the
    matching sorted values; ``node_of`` is scratch of length ``len(X)``.
    """
    p = XT.shape[0]
    n_rows = rows.shape[0]
    feats = np.empty(p, dtype=np.int64)
    buf = np.empty(n_rows, dtype=rows.dtype)
    cap = 2 * n_rows + 1
    pend_gain = np.empty(cap)
    pend_f = np.empty(cap, dtype=np.int64)
    pend_thr = np.empty(cap)
    depth = np.zeros(cap, dtype=np.int64)
    pending = np.zeros(cap, dtype=np.bool_)
    sv = np.empty(n_rows)
    tc = np.empty(n_rows)
    wv = np.empty(n_rows)
    cv = np.empty(n_rows, dtype=np.int64)
    ridx = np.empty(n_rows, dtype=np.int64)

    node_of[:] = -1
    for k in range(n_rows):
        node_of[rows[k]] = 0
    n_nodes = 1
    start[0] = 0
    end[0] = n_rows
    feat[0] = -1
    thr[0] = 0.0
    left[0] = -1
    right[0] = -1
    gain[0] = 0.0
    Wt = 0.0
    St = 0.0
    for k in range(n_rows):
        Wt += w[rows[k]]
        St += w[rows[k]] * t[rows[k]]
    value[0] = St / Wt if Wt > 0 else 0.0
    if max_depth != 0:
        nf = _draw_features(p, mtry, feats)
        g, f, th = _node_split(XT, t, w, cnt, rows, 0, n_rows, feats, nf, min_split, min_leaf,
                                       xorder, xsorted, node_of, 0, sv, tc, wv, cv, ridx)
        if f >= 0:
            pending[0] = True
            pend_gain[0] = g
            pend_f[0] = f
            pend_thr[0] = th
    n_leaves = 1
    while max_leaves < 0 or n_leaves < max_leaves:
        node = -1
        bg = -1.0
        for i in range(n_nodes):
            if pending[i] and pend_gain[i] > bg:
                bg = pend_gain[i]
                node = i
        if node < 0:
            break
        pending[node] = False
        f = pend_f[node]
        th = pend_thr[node]
        s = start[node]
        e = end[node]
        nl = 0
        for k in range(s, e):
            if XT[f, rows[k]] < th:
                rows[s + nl] = rows[k]
                nl += 1
            else:
                buf[k - s - nl] = rows[k]
        for k in range(e - s - nl):
            rows[s + nl + k] = buf[k]
        feat[node] = f
        thr[node] = th
        gain[node] = bg
        for side in range(2):
            c = n_nodes
            n_nodes += 1
            if side == 0:
                left[node] = c
                start[c] = s
                end[c] = s + nl
            else:
                right[node] = c
                start[c] = s + nl
                end[c] = e
            feat[c] = -1
            thr[c] = 0.0
            left[c] = -1
            right[c] = -1
            gain[c] = 0.0
            depth[c] = depth[node] + 1
            Wc = 0.0
            Sc = 0.0
            for k in range(start[c], end[c]):
                node_of[rows[k]] = c
                Wc += w[rows[k]]
                Sc += w[rows[k]] * t[rows[k]]
            value[c] = Sc / Wc if Wc > 0 else value[node]
            if max_depth < 0 or depth[c] < max_depth:
                nf = _draw_features(p, mtry, feats)
                g, fc, thc = _node_split(XT, t, w, cnt, rows, start[c], end[c], feats, nf, min_split, min_leaf,
                                             xorder, xsorted, node_of, c, sv, tc, wv, cv, ridx)
                if fc >= 0:
                    pending[c] = True
                    pend_gain[c] = g
                    pend_f[c] = fc
                    pend_thr[c] = thc
        n_leaves += 1
    return n_nodes


@njit(cache=True, nogil=True)
def presort(X):
    """Feature-major copy of X, per-feature stable argsort and the sorted values."""
    n, p = X.shape
    XT = np.ascontiguousarray(X.T)
    order = np.empty((p, n), dtype=np.int64)
    vals = np.empty((p, n))
    for f in range(p):
        order[f] = np.argsort(XT[f], kind="mergesort")
        vals[f] = XT[f][order[f]]
    return XT, order, vals


@njit(cache=True, nogil=True)
def fit_forest(X, y, n_trees, mtry, min_split, bootstrap, seeds, max_nodes):
    """Forest of trees on bootstrap samples (or all rows). Returns packed node arrays plus per-tree row slices."""
    n, p = X.shape
    feat = np.full((n_trees, max_nodes), -1, dtype=np.int32)
    thr = np.zeros((n_trees, max_nodes))
    left = np.full((n_trees, max_nodes), -1, dtype=np.int32)
    right = np.full((n_trees, max_nodes), -1, dtype=np.int32)
    value = np.zeros((n_trees, max_nodes))
    gain = np.zeros((n_trees, max_nodes))
    start = np.zeros((n_trees, max_nodes), dtype=np.int32)
    end = np.zeros((n_trees, max_nodes), dtype=np.int32)
    rows_out = np.full((n_trees, n), -1, dtype=np.int32)
    fw_out = np.zeros((n_trees, n))
    n_nodes = np.zeros(n_trees, dtype=np.int32)
    n_rows = np.zeros(n_trees, dtype=np.int32)
    counts = np.zeros(n, dtype=np.int64)
    w = np.zeros(n)
    XT, xorder, xsorted = presort(X)
    node_of = np.empty(n, dtype=np.int64)
    f_ = np.empty(max_nodes, dtype=np.int64)
    th_ = np.empty(max_nodes)
    l_ = np.empty(max_nodes, dtype=np.int64)
    r_ = np.empty(max_nodes, dtype=np.int64)
    v_ = np.empty(max_nodes)
    g_ = np.empty(max_nodes)
    s_ = np.empty(max_nodes, dtype=np.int64)
    e_ = np.empty(max_nodes, dtype=np.int64)
    for b in range(n_trees):
        np.random.seed(seeds[b])
        if bootstrap:
            counts[:] = 0
            for i in range(n):
                counts[np.random.randint(0, n)] += 1
        else:
            counts[:] = 1
        m = 0
        for i in range(n):
            if counts[i] > 0:
                m += 1
        rows = np.empty(m, dtype=np.int64)
        k = 0
        for i in range(n):
            w[i] = counts[i]
            if counts[i] > 0:
                rows[k] = i
                k += 1
        nn = grow_tree(XT, y, w, counts, rows, mtry, min_split, 1, -1, -1,
                       f_, th_, l_, r_, v_, g_, s_, e_, xorder, xsorted, node_of)
        n_nodes[b] = nn
        n_rows[b] = m
        for i in range(nn):
            feat[b, i] = f_[i]
            thr[b, i] = th_[i]
            left[b, i] = l_[i]
            right[b, i] = r_[i]
            value[b, i] = v_[i]
            gain[b, i] = g_[i]
            start[b, i] = s_[i]
            end[b, i] = e_[i]
        for i in range(m):
            rows_out[b, i] = rows[i]
            fw_out[b, i] = w[rows[i]]
    return feat, thr, left, right, value, gain, start, end, rows_out, fw_out, n_nodes, n_rows


@njit(cache=True, nogil=True)
def fit_boosted(X, y, w, n_rounds, lr, min_leaf, max_leaves, max_depth, max_nodes):
    """Squared-error gradient boosting with observation weights ``w``.

    Returns packed node arrays, row slices, per-round targets (the residuals
    each tree was fit to) and the initial value (weighted mean of y).
    """
    n, p = X.shape
    feat = np.full((n_rounds, max_nodes), -1, dtype=np.int32)
    thr = np.zeros((n_rounds, max_nodes))
    left = np.full((n_rounds, max_nodes), -1, dtype=np.int32)
    right = np.full((n_rounds, max_nodes), -1, dtype=np.int32)
    value = np.zeros((n_rounds, max_nodes))
    gain = np.zeros((n_rounds, max_nodes))
    start = np.zeros((n_rounds, max_nodes), dtype=np.int32)
    end = np.zeros((n_rounds, max_nodes), dtype=np.int32)
    rows_out = np.full((n_rounds, n), -1, dtype=np.int32)
    fw_out = np.zeros((n_rounds, n))
    targets = np.zeros((n_rounds, n))
    n_nodes = np.zeros(n_rounds, dtype=np.int32)
    n_rows = np.zeros(n_rounds, dtype=np.int32)
    cnt = np.ones(n, dtype=np.int64)
    XT, xorder, xsorted = presort(X)
    node_of = np.empty(n, dtype=np.int64)
    W = 0.0
    S = 0.0
    for i in range(n):
        W += w[i]
        S += w[i] * y[i]
    init = S / W
    F = np.full(n, init)
    r = np.empty(n)
    rows = np.empty(n, dtype=np.int64)
    f_ = np.empty(max_nodes, dtype=np.int64)
    th_ = np.empty(max_nodes)
    l_ = np.empty(max_nodes, dtype=np.int64)
    r_ = np.empty(max_nodes, dtype=np.int64)
    v_ = np.empty(max_nodes)
    g_ = np.empty(max_nodes)
    s_ = np.empty(max_nodes, dtype=np.int64)
    e_ = np.empty(max_nodes, dtype=np.int64)
    for b in range(n_rounds):
        for i in range(n):
            r[i] = y[i] - F[i]
            rows[i] = i
            targets[b, i] = r[i]
        nn = grow_tree(XT, r, w, cnt, rows, p, 2, min_leaf, max_leaves, max_depth,
                       f_, th_, l_, r_, v_, g_, s_, e_, xorder, xsorted, node_of)
        n_nodes[b] = nn
        n_rows[b] = n
        for i in range(nn):
            feat[b, i] = f_[i]
            thr[b, i] = th_[i]
            left[b, i] = l_[i]
            right[b, i] = r_[i]
            value[b, i] = v_[i]
            gain[b, i] = g_[i]
            start[b, i] = s_[i]
            end[b, i] = e_[i]
            if f_[i] < 0:
                for k in range(s_[i], e_[i]):
                    F[rows[k]] += lr * v_[i]
        for i in range(n):
            rows_out[b, i] = rows[i]
            fw_out[b, i] = w[rows[i]]
    return (feat, thr, left, right, value, gain, start, end, rows_out, fw_out,
            n_nodes, n_rows, targets, init)


@njit(cache=True, nogil=True)
def apply_trees(X, feat, thr, left, right):
    """Leaf index reached by every row of X in every tree: (n, T) int32."""
    n = X.shape[0]
    T = feat.shape[0]
    out = np.empty((n, T), dtype=np.int32)
    for t in range(T):
        for i in range(n):
            node = 0
            while feat[t, node] >= 0:
                if X[i, feat[t, node]] < thr[t, node]:
                    node = left[t, node]
                else:
                    node = right[t, node]
            out[i, t] = node
    return out


@njit(cache=True, nogil=True)
def co_leaf_fraction(LA, LB, max_nodes):
    """Fraction of trees in which row i of A and row j of B share a leaf.

    Buckets B's rows by leaf per tree, so the cost scales with the number
    of matching pairs rather than |A| * |B| * T.
    """
    na, T = LA.shape
    nb = LB.shape[0]
    out = np.zeros((na, nb))
    head = np.full(max_nodes, -1, dtype=np.int64)
    nxt = np.full(nb, -1, dtype=np.int64)
    for t in range(T):
        for j in range(nb - 1, -1, -1):
            leaf = LB[j, t]
            nxt[j] = head[leaf]
            head[leaf] = j
        for i in range(na):
            j = head[LA[i, t]]
            while j >= 0:
                out[i, j] += 1.0
                j = nxt[j]
        for j in range(nb):
            head[LB[j, t]] = -1
    return out / T


@njit(cache=True, nogil=True)
def weighted_leaf_values(L, A, value, start, end, rows, fw, targets):
    """Attention-weighted leaf means, one per (test row, tree).

    For test row i and tree t the leaf value is
    sum(fw * A[i, r] * targets[t, r]) / sum(fw * A[i, r]) over the leaf's
    training rows r, falling back to the fitted leaf value when that leaf
    carries no attention mass.
    """
    n, T = L.shape
    out = np.empty((n, T))
    for i in range(n):
        for t in range(T):
            leaf = L[i, t]
            num = 0.0
            den = 0.0
            for k in range(start[t, leaf], end[t, leaf]):
                r = rows[t, k]
                a = fw[t, k] * A[i, r]
                num += a * targets[t, r]
                den += a
            out[i, t] = num / den if den > 0.0 else value[t, leaf]
    return out
