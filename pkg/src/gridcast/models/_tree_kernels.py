"""Compiled inner loops for exact-greedy regression trees."""

import numba
import numpy as np


@numba.njit(cache=True, nogil=True)
def best_splits(Xs, order, resid, slot_of, n_slots, min_leaf):
    """Best variance-reduction split for every active slot.

    ``Xs[f, k]`` is the k-th smallest value of feature ``f`` and ``order[f, k]``
    its row. ``slot_of[i]`` is the slot (open leaf) of row ``i`` or -1. Features are
    scanned in index order and thresholds in increasing order, and only a
    strictly larger gain replaces the incumbent, so ties resolve to the lowest
    feature index and then the lowest threshold.
    """
    n_feat = Xs.shape[0]
    n_rows = Xs.shape[1]
    tot_sum = np.zeros(n_slots)
    tot_cnt = np.zeros(n_slots, dtype=np.int64)
    for i in range(n_rows):
        s = slot_of[i]
        if s >= 0:
            tot_sum[s] += resid[i]
            tot_cnt[s] += 1

    best_gain = np.zeros(n_slots)
    best_feat = np.full(n_slots, -1, dtype=np.int64)
    best_thr = np.zeros(n_slots)
    left_sum = np.zeros(n_slots)
    left_cnt = np.zeros(n_slots, dtype=np.int64)
    last_val = np.zeros(n_slots)

    for f in range(n_feat):
        left_sum[:] = 0.0
        left_cnt[:] = 0
        ordf = order[f]
        xf = Xs[f]
        for k in range(n_rows):
            i = ordf[k]
            s = slot_of[i]
            if s < 0:
                continue
            v = xf[k]
            nl = left_cnt[s]
            if nl > 0 and v > last_val[s]:
                nr = tot_cnt[s] - nl
                if nl >= min_leaf and nr >= min_leaf:
                    sl = left_sum[s]
                    sr = tot_sum[s] - sl
                    gain = sl * sl / nl + sr * sr / nr - tot_sum[s] * tot_sum[s] / tot_cnt[s]
                    if gain > best_gain[s]:
                        best_gain[s] = gain
                        best_feat[s] = f
                        thr = 0.5 * (last_val[s] + v)
                        if not thr < v:
                            thr = last_val[s]
                        best_thr[s] = thr
            left_sum[s] += resid[i]
            left_cnt[s] = nl + 1
            last_val[s] = v
    return best_feat, best_thr, best_gain


@numba.njit(cache=True, nogil=True)
def apply_forest(X, feature, threshold, left, right, value, roots, base, rate):
    """``base + sum_t rate * tree_t(x)``, accumulated tree by tree."""
    n = X.shape[0]
    out = np.full(n, base)
    for t in range(roots.shape[0]):
        root = roots[t]
        for i in range(n):
            node = root
            while feature[node] >= 0:
                if X[i, feature[node]] <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            out[i] += rate * value[node]
    return out
