"""Bagged CART regression forest, compiled with numba.

Trees greedily minimise within-node squared error. Rows are subsampled
without replacement (fraction configurable), features are subsampled per
node (mtry), and all randomness comes from an inline splitmix64 stream so
fits are bit-reproducible for a fixed seed and row order. Tie-breaking is
lowest feature index, then lowest threshold.

Each feature is argsorted once per fit; every tree then keeps one row-index
array per feature in feature-sorted order and stably partitions all of them
at each split, so no sorting happens inside nodes.
"""
from __future__ import annotations

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


@njit(cache=True, inline="always")
def _splitmix64(state):
    # state is a length-1 uint64 array used as a mutable cell
    state[0] = state[0] + _GOLDEN
    z = state[0]
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


@njit(cache=True, inline="always")
def _rand_below(state, n):
    return np.int64(_splitmix64(state) % np.uint64(n))


@njit(cache=True)
def _scan_feature(X, t, sorted_idx, f, lo, hi, min_leaf, s_total):
    """Best (score, threshold, n_left) on one feature over rows [lo, hi).

    Score is s_L^2/n_L + s_R^2/n_R (maximising it minimises the summed
    child squared errors). Splits are placed between distinct consecutive
    values only; scanning left to right with strict improvement makes the
    lowest threshold win ties.
    """
    m = hi - lo
    best_score = -np.inf
    best_thresh = 0.0
    best_nl = 0
    s_left = 0.0
    prev_row = sorted_idx[f, lo]
    prev_val = X[prev_row, f]
    for i in range(m - 1):
        row = sorted_idx[f, lo + i]
        s_left += t[row]
        next_val = X[sorted_idx[f, lo + i + 1], f]
        n_left = i + 1
        if n_left >= min_leaf and (m - n_left) >= min_leaf:
            v_here = X[row, f]
            if next_val > v_here:
                s_right = s_total - s_left
                score = s_left * s_left / n_left + s_right * s_right / (m - n_left)
                if score > best_score:
                    thresh = 0.5 * (v_here + next_val)
                    if thresh >= next_val:
                        thresh = v_here  # adjacent floats: keep predicate exact
                    best_score = score
                    best_thresh = thresh
                    best_nl = n_left
    return best_score, best_thresh, best_nl


@njit(cache=True)
def _build_tree(
    X,
    t,
    sorted_idx,
    min_leaf,
    mtry,
    rng_state,
    feat_buf,
    part_buf,
    node_feature,
    node_thresh,
    node_left,
    node_value,
):
    """Grow one tree on the rows listed in sorted_idx; return node count.

    Node storage is flat and tree-local: feature < 0 marks a leaf,
    node_left[k] holds the left child id, and the right child is
    node_left[k] + 1 because children are allocated in consecutive pairs.
    """
    p = X.shape[1]
    n_sub = sorted_idx.shape[1]
    stack_lo = np.empty(n_sub + 2, dtype=np.int64)
    stack_hi = np.empty(n_sub + 2, dtype=np.int64)
    stack_node = np.empty(n_sub + 2, dtype=np.int64)
    n_nodes = 1
    stack_size = 1
    stack_lo[0] = 0
    stack_hi[0] = n_sub
    stack_node[0] = 0

    while stack_size > 0:
        stack_size -= 1
        lo = stack_lo[stack_size]
        hi = stack_hi[stack_size]
        node = stack_node[stack_size]
        m = hi - lo

        s = 0.0
        for i in range(lo, hi):
            s += t[sorted_idx[0, i]]

        best_f = -1
        best_thresh = 0.0
        best_nl = 0
        if m >= 2 * min_leaf:
            homogeneous = True
            first = t[sorted_idx[0, lo]]
            for i in range(lo + 1, hi):
                if t[sorted_idx[0, i]] != first:
                    homogeneous = False
                    break
            if not homogeneous:
                base = s * s / m
                best_score = base + 1e-12 * (1.0 + abs(base))
                # draw mtry distinct features, visit them in ascending order
                # so the lowest feature index wins score ties
                for j in range(p):
                    feat_buf[j] = j
                k = mtry if mtry < p else p
                for j in range(k):
                    r = j + _rand_below(rng_state, p - j)
                    tmp = feat_buf[j]
                    feat_buf[j] = feat_buf[r]
                    feat_buf[r] = tmp
                chosen = np.sort(feat_buf[:k].copy())
                for j in range(k):
                    f = chosen[j]
                    score, thresh, nl = _scan_feature(X, t, sorted_idx, f, lo, hi, min_leaf, s)
                    if score > best_score:
                        best_score = score
                        best_f = f
                        best_thresh = thresh
                        best_nl = nl
                if best_f < 0 and k < p:
                    # sampled features were all constant here; fall back to
                    # the full feature set so interpolation stays possible
                    for f in range(p):
                        score, thresh, nl = _scan_feature(X, t, sorted_idx, f, lo, hi, min_leaf, s)
                        if score > best_score:
                            best_score = score
                            best_f = f
                            best_thresh = thresh
                            best_nl = nl

        if best_f < 0:
            node_feature[node] = -1
            node_thresh[node] = 0.0
            node_left[node] = -1
            node_value[node] = s / m
            continue

        # stable partition of every feature's sorted segment: left rows
        # (X[:, best_f] <= thresh) first, preserving within-feature order
        for f in range(p):
            nl = 0
            nr = 0
            for i in range(lo, hi):
                row = sorted_idx[f, i]
                if X[row, best_f] <= best_thresh:
                    part_buf[nl] = row
                    nl += 1
                else:
                    part_buf[best_nl + nr] = row
                    nr += 1
            for i in range(m):
                sorted_idx[f, lo + i] = part_buf[i]

        left_id = n_nodes
        n_nodes += 2
        node_feature[node] = best_f
        node_thresh[node] = best_thresh
        node_left[node] = left_id
        node_value[node] = s / m
        stack_lo[stack_size] = lo
        stack_hi[stack_size] = lo + best_nl
        stack_node[stack_size] = left_id
        stack_size += 1
        stack_lo[stack_size] = lo + best_nl
        stack_hi[stack_size] = hi
        stack_node[stack_size] = left_id + 1
        stack_size += 1
    return n_nodes


@njit(cache=True)
def fit_forest(X, t, n_trees, min_leaf, mtry, bootstrap_fraction, seed):
    """Fit the forest; returns packed node arrays plus per-tree offsets."""
    m, p = X.shape
    n_sub = int(np.ceil(bootstrap_fraction * m))
    if n_sub < 2:
        n_sub = 2
    if n_sub > m:
        n_sub = m

    global_order = np.empty((p, m), dtype=np.int64)
    for f in range(p):
        global_order[f] = np.argsort(X[:, f], kind="mergesort")

    cap_per_tree = 2 * n_sub + 2
    cap = n_trees * cap_per_tree
    node_feature = np.empty(cap, dtype=np.int64)
    node_thresh = np.empty(cap, dtype=np.float64)
    node_left = np.empty(cap, dtype=np.int64)
    node_value = np.empty(cap, dtype=np.float64)
    tree_offset = np.empty(n_trees + 1, dtype=np.int64)
    tree_offset[0] = 0
    in_sample_all = np.zeros((n_trees, m), dtype=np.uint8)

    row_buf = np.empty(m, dtype=np.int64)
    in_sample = np.zeros(m, dtype=np.uint8)
    sorted_idx = np.empty((p, n_sub), dtype=np.int64)
    feat_buf = np.empty(p, dtype=np.int64)
    part_buf = np.empty(n_sub, dtype=np.int64)
    rng_state = np.empty(1, dtype=np.uint64)

    used = 0
    for tree in range(n_trees):
        rng_state[0] = np.uint64(seed) + np.uint64(0x9E3779B9) * np.uint64(tree + 1)
        _splitmix64(rng_state)
        _splitmix64(rng_state)
        for i in range(m):
            row_buf[i] = i
        for i in range(n_sub):
            r = i + _rand_below(rng_state, m - i)
            tmp = row_buf[i]
            row_buf[i] = row_buf[r]
            row_buf[r] = tmp
        for i in range(n_sub):
            in_sample[row_buf[i]] = 1
        for f in range(p):
            j = 0
            for i in range(m):
                row = global_order[f, i]
                if in_sample[row] == 1:
                    sorted_idx[f, j] = row
                    j += 1
        for i in range(m):
            in_sample_all[tree, i] = in_sample[i]
        for i in range(n_sub):
            in_sample[row_buf[i]] = 0

        n_nodes = _build_tree(
            X,
            t,
            sorted_idx,
            min_leaf,
            mtry,
            rng_state,
            feat_buf,
            part_buf,
            node_feature[used:],
            node_thresh[used:],
            node_left[used:],
            node_value[used:],
        )
        used += n_nodes
        tree_offset[tree + 1] = used

    return (
        node_feature[:used].copy(),
        node_thresh[:used].copy(),
        node_left[:used].copy(),
        node_value[:used].copy(),
        tree_offset,
        in_sample_all,
    )


@njit(cache=True)
def predict_forest(node_feature, node_thresh, node_left, node_value, tree_offset, X):
    # node_left stores tree-local child ids; children are allocated in
    # consecutive pairs so right child = left child + 1
    n_trees = tree_offset.shape[0] - 1
    q = X.shape[0]
    out = np.zeros(q, dtype=np.float64)
    for tree in range(n_trees):
        root = tree_offset[tree]
        for i in range(q):
            node = root
            while node_feature[node] >= 0:
                if X[i, node_feature[node]] <= node_thresh[node]:
                    node = root + node_left[node]
                else:
                    node = root + node_left[node] + 1
            out[i] += node_value[node]
    return out / n_trees


@njit(cache=True)
def predict_forest_oob(node_feature, node_thresh, node_left, node_value,
                       tree_offset, in_sample, X):
    """Out-of-bag predictions for the training rows (positional).

    Row i averages only the trees whose subsample excluded i; rows that
    every tree used fall back to the all-trees prediction.
    """
    n_trees = tree_offset.shape[0] - 1
    q = X.shape[0]
    out = np.zeros(q, dtype=np.float64)
    counts = np.zeros(q, dtype=np.int64)
    full = np.zeros(q, dtype=np.float64)
    for tree in range(n_trees):
        root = tree_offset[tree]
        for i in range(q):
            node = root
            while node_feature[node] >= 0:
                if X[i, node_feature[node]] <= node_thresh[node]:
                    node = root + node_left[node]
                else:
                    node = root + node_left[node] + 1
            value = node_value[node]
            full[i] += value
            if in_sample[tree, i] == 0:
                out[i] += value
                counts[i] += 1
    for i in range(q):
        if counts[i] > 0:
            out[i] /= counts[i]
        else:
            out[i] = full[i] / n_trees
    return out
