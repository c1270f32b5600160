"""Numba kernels for growing and evaluating regression trees.

Both engines share the same flat node-array representation: feature < 0
marks a leaf, internal nodes send rows with x[feature] <= threshold left.
Split candidates are midpoints between consecutive distinct sorted values;
ties in split quality resolve to the lowest feature index, then the lowest
threshold, so results are deterministic.

Trees grow breadth-first over columns that are argsorted once per fit:
every level costs one linear walk per feature instead of a sort per node.
The only in-kernel randomness is the per-node feature subsampling of the
variance-reduction grower, seeded per tree, which keeps fits bit-identical
regardless of how trees are scheduled across workers.
"""

import numpy as np
from numba import njit

LEAF = -1


def argsort_columns(X: np.ndarray) -> np.ndarray:
    """Row order of each column by ascending value, shape (p, n)."""
    return np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T)


@njit(cache=True, nogil=True)
def soft_threshold_weight(g_sum, h_sum, lam, alpha):
    """Minimizer of g*w + 0.5*(h+lam)*w^2 + alpha*|w|."""
    mag = abs(g_sum) - alpha
    if mag <= 0.0:
        return 0.0
    w = mag / (h_sum + lam)
    return -w if g_sum > 0.0 else w


@njit(cache=True, nogil=True)
def gain_score(g_sum, h_sum, lam, alpha):
    """Contribution of one node to the regularized split gain."""
    mag = abs(g_sum) - alpha
    if mag <= 0.0:
        return 0.0
    return mag * mag / (h_sum + lam)


@njit(cache=True, nogil=True)
def scan_variance_split(X, y, idx, start, end, feats, min_node):
    """Best variance-reducing split for rows idx[start:end] over feats.

    Returns (feature, threshold, reduction); feature is -1 when no split
    improves on the parent by more than zero. Single-node reference for
    the level-wise grower below, exposed as the public split search.
    """
    m = end - start
    best_feat = -1
    best_thr = 0.0
    best_red = 0.0

    vals = np.empty(m, dtype=np.float64)
    resp = np.empty(m, dtype=np.float64)
    for fi in range(feats.shape[0]):
        f = feats[fi]
        for k in range(m):
            row = idx[start + k]
            vals[k] = X[row, f]
            resp[k] = y[row]
        order = np.argsort(vals)

        tot = 0.0
        tot2 = 0.0
        for k in range(m):
            tot += resp[k]
            tot2 += resp[k] * resp[k]
        parent_sse = tot2 - tot * tot / m

        cl = 0.0
        cl2 = 0.0
        for k in range(m - 1):
            v = resp[order[k]]
            cl += v
            cl2 += v * v
            nl = k + 1
            nr = m - nl
            if nl < min_node:
                continue
            if nr < min_node:
                break
            lo = vals[order[k]]
            hi = vals[order[k + 1]]
            if lo == hi:
                continue
            sse_l = cl2 - cl * cl / nl
            cr = tot - cl
            sse_r = (tot2 - cl2) - cr * cr / nr
            red = parent_sse - sse_l - sse_r
            if red > best_red:
                thr = 0.5 * (lo + hi)
                if thr >= hi:  # adjacent floats: keep the boundary strictly below hi
                    thr = lo
                best_red = red
                best_feat = f
                best_thr = thr
    return best_feat, best_thr, best_red


@njit(cache=True, nogil=True)
def grow_forest_tree(X, col_order, y, mult, mtry, min_node, feat_seed):
    """CART regression tree on a bagged multiset of rows.

    mult[i] is how many times row i appears in the bag. Leaf value is the
    (multiplicity-weighted) mean response. Nodes with fewer than
    2*min_node rows or a constant response become leaves; each split must
    keep min_node rows per child and strictly reduce the squared error.
    """
    np.random.seed(feat_seed)
    n, p = X.shape

    bag = 0
    for i in range(n):
        bag += mult[i]
    max_nodes = 2 * bag + 2
    feature = np.full(max_nodes, LEAF, dtype=np.int32)
    threshold = np.zeros(max_nodes, dtype=np.float64)
    left = np.full(max_nodes, LEAF, dtype=np.int32)
    right = np.full(max_nodes, LEAF, dtype=np.int32)
    value = np.zeros(max_nodes, dtype=np.float64)
    count = np.zeros(max_nodes, dtype=np.int32)

    node_of = np.full(n, -1, dtype=np.int64)
    sy = 0.0
    sy2 = 0.0
    cnt = 0
    y_lo = np.inf
    y_hi = -np.inf
    for i in range(n):
        k = mult[i]
        if k == 0:
            continue
        node_of[i] = 0
        yv = y[i]
        sy += k * yv
        sy2 += k * yv * yv
        cnt += k
        if yv < y_lo:
            y_lo = yv
        if yv > y_hi:
            y_hi = yv
    value[0] = sy / cnt
    count[0] = cnt
    n_nodes = 1

    width = n + 1
    tot_y = np.zeros(width)
    tot_y2 = np.zeros(width)
    tot_n = np.zeros(width, dtype=np.int64)
    lo_y = np.zeros(width)
    hi_y = np.zeros(width)
    new_y = np.zeros(width)
    new_y2 = np.zeros(width)
    new_n = np.zeros(width, dtype=np.int64)
    new_lo = np.zeros(width)
    new_hi = np.zeros(width)
    splittable = np.zeros(width, dtype=np.uint8)
    fmask = np.zeros((width, p), dtype=np.uint8)
    run_y = np.zeros(width)
    run_y2 = np.zeros(width)
    run_n = np.zeros(width, dtype=np.int64)
    prev_v = np.zeros(width)
    best_red = np.zeros(width)
    best_feat = np.full(width, -1, dtype=np.int64)
    best_thr = np.zeros(width)
    child_left = np.zeros(width, dtype=np.int64)

    tot_y[0] = sy
    tot_y2[0] = sy2
    tot_n[0] = cnt
    lo_y[0] = y_lo
    hi_y[0] = y_hi
    level_start = 0
    n_active = 1

    while n_active > 0:
        any_split = False
        for a in range(n_active):
            best_feat[a] = -1
            best_red[a] = 0.0
            ok = tot_n[a] >= 2 * min_node and tot_n[a] >= 2 and lo_y[a] < hi_y[a]
            splittable[a] = 1 if ok else 0
            if ok:
                any_split = True
                for j in range(p):
                    fmask[a, j] = 0
                sel = np.random.permutation(p)[:mtry]
                for j in range(sel.shape[0]):
                    fmask[a, sel[j]] = 1
        if not any_split:
            break

        for f in range(p):
            for a in range(n_active):
                run_y[a] = 0.0
                run_y2[a] = 0.0
                run_n[a] = 0
            for q in range(n):
                row = col_order[f, q]
                k = mult[row]
                if k == 0:
                    continue
                nd = node_of[row]
                if nd < level_start:
                    continue
                a = nd - level_start
                if splittable[a] == 0 or fmask[a, f] == 0:
                    continue
                v = X[row, f]
                if run_n[a] > 0 and v > prev_v[a]:
                    nl = run_n[a]
                    nr = tot_n[a] - nl
                    if nl >= min_node and nr >= min_node:
                        sse_l = run_y2[a] - run_y[a] * run_y[a] / nl
                        ry = tot_y[a] - run_y[a]
                        sse_r = (tot_y2[a] - run_y2[a]) - ry * ry / nr
                        parent = tot_y2[a] - tot_y[a] * tot_y[a] / tot_n[a]
                        red = parent - sse_l - sse_r
                        if red > best_red[a]:
                            lo = prev_v[a]
                            thr = 0.5 * (lo + v)
                            if thr >= v:  # adjacent floats
                                thr = lo
                            best_red[a] = red
                            best_feat[a] = f
                            best_thr[a] = thr
                yv = y[row]
                run_y[a] += k * yv
                run_y2[a] += k * yv * yv
                run_n[a] += k
                prev_v[a] = v

        next_start = n_nodes
        for a in range(n_active):
            if splittable[a] == 1 and best_feat[a] >= 0:
                node = level_start + a
                feature[node] = np.int32(best_feat[a])
                threshold[node] = best_thr[a]
                left[node] = n_nodes
                right[node] = n_nodes + 1
                child_left[a] = n_nodes
                n_nodes += 2
            else:
                child_left[a] = -1
        n_new = n_nodes - next_start
        if n_new == 0:
            break

        for b in range(n_new):
            new_y[b] = 0.0
            new_y2[b] = 0.0
            new_n[b] = 0
            new_lo[b] = np.inf
            new_hi[b] = -np.inf
        for row in range(n):
            k = mult[row]
            if k == 0:
                continue
            nd = node_of[row]
            if nd < level_start:
                continue
            a = nd - level_start
            cl = child_left[a]
            if cl < 0:
                continue
            node = level_start + a
            child = cl if X[row, feature[node]] <= threshold[node] else cl + 1
            node_of[row] = child
            b = child - next_start
            yv = y[row]
            new_y[b] += k * yv
            new_y2[b] += k * yv * yv
            new_n[b] += k
            if yv < new_lo[b]:
                new_lo[b] = yv
            if yv > new_hi[b]:
                new_hi[b] = yv
        for b in range(n_new):
            node = next_start + b
            value[node] = new_y[b] / new_n[b]
            count[node] = np.int32(new_n[b])

        tot_y, new_y = new_y, tot_y
        tot_y2, new_y2 = new_y2, tot_y2
        tot_n, new_n = new_n, tot_n
        lo_y, new_lo = new_lo, lo_y
        hi_y, new_hi = new_hi, hi_y
        level_start = next_start
        n_active = n_new

    return (
        feature[:n_nodes],
        threshold[:n_nodes],
        left[:n_nodes],
        right[:n_nodes],
        value[:n_nodes],
        count[:n_nodes],
    )


@njit(cache=True, nogil=True)
def grow_boost_tree(X, col_order, g, in_sample, feat_mask, max_depth, min_child_weight, lam, alpha, eta):
    """Depth-limited regularized boosting tree on gradients (unit hessians).

    Rows with in_sample[i] == 0 are ignored; feat_mask selects the columns
    this tree may use. Splits maximize the L1/L2-regularized gain subject
    to the per-child hessian floor; leaf values already carry eta.
    """
    n, p = X.shape
    n_rows = 0
    for i in range(n):
        if in_sample[i] != 0:
            n_rows += 1
    max_nodes = 2 * n_rows + 2
    feature = np.full(max_nodes, LEAF, dtype=np.int32)
    threshold = np.zeros(max_nodes, dtype=np.float64)
    left = np.full(max_nodes, LEAF, dtype=np.int32)
    right = np.full(max_nodes, LEAF, dtype=np.int32)
    value = np.zeros(max_nodes, dtype=np.float64)
    count = np.zeros(max_nodes, dtype=np.int32)

    node_of = np.full(n, -1, dtype=np.int64)
    sg = 0.0
    cnt = 0
    for i in range(n):
        if in_sample[i] == 0:
            continue
        node_of[i] = 0
        sg += g[i]
        cnt += 1
    value[0] = eta * soft_threshold_weight(sg, float(cnt), lam, alpha)
    count[0] = cnt
    n_nodes = 1

    width = n_rows + 1
    tot_g = np.zeros(width)
    tot_n = np.zeros(width, dtype=np.int64)
    new_g = np.zeros(width)
    new_n = np.zeros(width, dtype=np.int64)
    splittable = np.zeros(width, dtype=np.uint8)
    run_g = np.zeros(width)
    run_n = np.zeros(width, dtype=np.int64)
    prev_v = np.zeros(width)
    best_gain = np.zeros(width)
    best_feat = np.full(width, -1, dtype=np.int64)
    best_thr = np.zeros(width)
    child_left = np.zeros(width, dtype=np.int64)

    tot_g[0] = sg
    tot_n[0] = cnt
    level_start = 0
    n_active = 1
    depth = 0

    while n_active > 0 and depth < max_depth:
        any_split = False
        for a in range(n_active):
            best_feat[a] = -1
            best_gain[a] = 0.0
            splittable[a] = 1 if tot_n[a] >= 2 else 0
            if splittable[a] == 1:
                any_split = True
        if not any_split:
            break

        for f in range(p):
            if feat_mask[f] == 0:
                continue
            for a in range(n_active):
                run_g[a] = 0.0
                run_n[a] = 0
            for q in range(n):
                row = col_order[f, q]
                if in_sample[row] == 0:
                    continue
                nd = node_of[row]
                if nd < level_start:
                    continue
                a = nd - level_start
                if splittable[a] == 0:
                    continue
                v = X[row, f]
                if run_n[a] > 0 and v > prev_v[a]:
                    nl = run_n[a]
                    nr = tot_n[a] - nl
                    if nl >= min_child_weight and nr >= min_child_weight:
                        gl = run_g[a]
                        gain = 0.5 * (
                            gain_score(gl, float(nl), lam, alpha)
                            + gain_score(tot_g[a] - gl, float(nr), lam, alpha)
                            - gain_score(tot_g[a], float(tot_n[a]), lam, alpha)
                        )
                        if gain > best_gain[a]:
                            lo = prev_v[a]
                            thr = 0.5 * (lo + v)
                            if thr >= v:
                                thr = lo
                            best_gain[a] = gain
                            best_feat[a] = f
                            best_thr[a] = thr
                run_g[a] += g[row]
                run_n[a] += 1
                prev_v[a] = v

        next_start = n_nodes
        for a in range(n_active):
            if splittable[a] == 1 and best_feat[a] >= 0:
                node = level_start + a
                feature[node] = np.int32(best_feat[a])
                threshold[node] = best_thr[a]
                left[node] = n_nodes
                right[node] = n_nodes + 1
                child_left[a] = n_nodes
                n_nodes += 2
            else:
                child_left[a] = -1
        n_new = n_nodes - next_start
        if n_new == 0:
            break

        for b in range(n_new):
            new_g[b] = 0.0
            new_n[b] = 0
        for row in range(n):
            if in_sample[row] == 0:
                continue
            nd = node_of[row]
            if nd < level_start:
                continue
            a = nd - level_start
            cl = child_left[a]
            if cl < 0:
                continue
            node = level_start + a
            child = cl if X[row, feature[node]] <= threshold[node] else cl + 1
            node_of[row] = child
            b = child - next_start
            new_g[b] += g[row]
            new_n[b] += 1
        for b in range(n_new):
            node = next_start + b
            value[node] = eta * soft_threshold_weight(new_g[b], float(new_n[b]), lam, alpha)
            count[node] = np.int32(new_n[b])

        tot_g, new_g = new_g, tot_g
        tot_n, new_n = new_n, tot_n
        level_start = next_start
        n_active = n_new
        depth += 1

    return (
        feature[:n_nodes],
        threshold[:n_nodes],
        left[:n_nodes],
        right[:n_nodes],
        value[:n_nodes],
        count[:n_nodes],
    )


@njit(cache=True, nogil=True)
def predict_into(feature, threshold, left, right, value, X, out):
    """Route every row of X to its leaf and add the leaf value into out."""
    for i in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] += value[node]
