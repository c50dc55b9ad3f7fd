"""Weighted gini CART trees over pre-binned features.

Features are discretised once per fit. A feature with at most ``max_bins``
distinct values gets one bin per value; otherwise runs of consecutive
distinct values are merged into quantile bins. Either way a split between
bin b and b+1 is stored as the midpoint between the largest value of bin b
and the smallest value of bin b+1, so every threshold is a midpoint between
two consecutive distinct training values.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

DEFAULT_MAX_BINS = 255


@dataclass
class Binning:
    """Per-feature bin codes plus the float threshold of each bin boundary."""

    codes: np.ndarray          # (n_features, n_rows) int32
    n_bins: np.ndarray         # (n_features,) int32
    thresholds: list           # thresholds[f][b] splits bin b from bin b+1


def bin_features(X: np.ndarray, max_bins: int | None = DEFAULT_MAX_BINS) -> Binning:
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    codes = np.empty((d, n), dtype=np.int32)
    n_bins = np.empty(d, dtype=np.int32)
    thresholds = []
    for f in range(d):
        uniq, inverse, counts = np.unique(X[:, f], return_inverse=True, return_counts=True)
        if max_bins is None or uniq.size <= max_bins:
            codes[f] = inverse
            n_bins[f] = uniq.size
            thresholds.append((uniq[:-1] + uniq[1:]) / 2.0)
            continue
        # group runs of distinct values so that bins hold ~equal row counts
        cum = np.cumsum(counts)
        targets = cum[-1] * np.arange(1, max_bins) / max_bins
        last_in_bin = np.unique(np.searchsorted(cum, targets, side="left"))
        last_in_bin = last_in_bin[last_in_bin < uniq.size - 1]
        value_bin = np.zeros(uniq.size, dtype=np.int32)
        value_bin[last_in_bin + 1] = 1
        value_bin = np.cumsum(value_bin).astype(np.int32)
        codes[f] = value_bin[inverse]
        n_bins[f] = last_in_bin.size + 1
        thresholds.append((uniq[last_in_bin] + uniq[last_in_bin + 1]) / 2.0)
    return Binning(codes, n_bins, thresholds)


@njit(cache=True)
def _next_random(state):
    # xorshift64*
    x = state[0]
    x ^= x >> np.uint64(12)
    x ^= x << np.uint64(25)
    x ^= x >> np.uint64(27)
    state[0] = x
    return (x * np.uint64(2685821657736338717)) >> np.uint64(11)


@njit(cache=True)
def _gini_sum(w, p):
    # w * gini(p / w) for a binary node
    if w <= 0.0:
        return 0.0
    return 2.0 * p * (w - p) / w


@njit(cache=True)
def _best_split_feature(codes_f, nb, rows, start, end, y, weight, count, min_leaf,
                        hw, hp, hc):
    """Best boundary for one feature; returns (score, bin, n_nonempty_bins)."""
    n_node = end - start
    best_score = np.inf
    best_bin = -1
    Wt = 0.0
    Pt = 0.0
    Ct = 0
    if nb <= 2 * n_node:
        for b in range(nb):
            hw[b] = 0.0
            hp[b] = 0.0
            hc[b] = 0
        for k in range(start, end):
            r = rows[k]
            b = codes_f[r]
            hw[b] += weight[r]
            hp[b] += weight[r] * y[r]
            hc[b] += count[r]
        nonempty = 0
        for b in range(nb):
            if hc[b] > 0:
                nonempty += 1
            Wt += hw[b]
            Pt += hp[b]
            Ct += hc[b]
        if nonempty < 2:
            return best_score, best_bin, nonempty
        wl = 0.0
        pl = 0.0
        cl = 0
        for b in range(nb - 1):
            if hc[b] == 0:
                continue
            wl += hw[b]
            pl += hp[b]
            cl += hc[b]
            cr = Ct - cl
            if cr == 0:
                break
            if cl < min_leaf or cr < min_leaf:
                continue
            s = _gini_sum(wl, pl) + _gini_sum(Wt - wl, Pt - pl)
            if s < best_score:
                best_score = s
                best_bin = b
        return best_score, best_bin, nonempty
    # sparse node: sort the node's codes instead of scanning all bins
    local = np.empty(n_node, dtype=np.int32)
    for k in range(n_node):
        local[k] = codes_f[rows[start + k]]
    order = np.argsort(local, kind="mergesort")
    for k in range(n_node):
        r = rows[start + k]
        Wt += weight[r]
        Pt += weight[r] * y[r]
        Ct += count[r]
    if local[order[0]] == local[order[n_node - 1]]:
        return best_score, best_bin, 1
    wl = 0.0
    pl = 0.0
    cl = 0
    for k in range(n_node - 1):
        r = rows[start + order[k]]
        wl += weight[r]
        pl += weight[r] * y[r]
        cl += count[r]
        b = local[order[k]]
        if local[order[k + 1]] == b:
            continue
        cr = Ct - cl
        if cl < min_leaf or cr < min_leaf:
            continue
        s = _gini_sum(wl, pl) + _gini_sum(Wt - wl, Pt - pl)
        if s < best_score:
            best_score = s
            best_bin = b
    return best_score, best_bin, 2


@njit(cache=True)
def build_tree(codes, n_bins, y, weight, count, max_features, min_leaf, max_depth, seed):
    """Grow one tree on rows with count > 0.

    Returns node arrays (feature, split_bin, left, right, value) and the
    per-feature weighted impurity decrease. ``max_depth < 0`` means unlimited.
    """
    d = codes.shape[0]
    n = y.shape[0]
    rows_list = []
    for i in range(n):
        if count[i] > 0:
            rows_list.append(i)
    m = len(rows_list)
    rows = np.empty(m, dtype=np.int64)
    for i in range(m):
        rows[i] = rows_list[i]
    cap = 2 * m + 1
    feature = np.full(cap, -1, dtype=np.int32)
    split_bin = np.full(cap, -1, dtype=np.int32)
    left = np.full(cap, -1, dtype=np.int32)
    right = np.full(cap, -1, dtype=np.int32)
    value = np.zeros(cap)
    importance = np.zeros(d)
    max_nb = 1
    for f in range(d):
        if n_bins[f] > max_nb:
            max_nb = n_bins[f]
    hw = np.empty(max_nb)
    hp = np.empty(max_nb)
    hc = np.empty(max_nb, dtype=np.int64)
    feats = np.arange(d)
    state = np.empty(1, dtype=np.uint64)
    state[0] = np.uint64(seed) | np.uint64(1)

    W_root = 0.0
    for k in range(m):
        W_root += weight[rows[k]]

    # stack of (node, start, end, depth)
    stack_node = np.empty(cap, dtype=np.int64)
    stack_start = np.empty(cap, dtype=np.int64)
    stack_end = np.empty(cap, dtype=np.int64)
    stack_depth = np.empty(cap, dtype=np.int64)
    sp = 0
    n_nodes = 1
    stack_node[0] = 0
    stack_start[0] = 0
    stack_end[0] = m
    stack_depth[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        node = stack_node[sp]
        start = stack_start[sp]
        end = stack_end[sp]
        depth = stack_depth[sp]
        W = 0.0
        P = 0.0
        C = 0
        for k in range(start, end):
            r = rows[k]
            W += weight[r]
            P += weight[r] * y[r]
            C += count[r]
        value[node] = P / W if W > 0 else 0.0
        if (max_depth >= 0 and depth >= max_depth) or C < 2 * min_leaf or P <= 0.0 or P >= W:
            continue
        best_score = np.inf
        best_f = -1
        best_b = -1
        visited = 0
        # partial Fisher-Yates: features are drawn until max_features
        # non-constant ones have been evaluated and a valid split exists
        for j in range(d):
            pick = j + np.int64(_next_random(state) % np.uint64(d - j))
            tmp = feats[j]
            feats[j] = feats[pick]
            feats[pick] = tmp
            f = feats[j]
            s, b, nonempty = _best_split_feature(codes[f], n_bins[f], rows, start, end, y, weight,
                                                 count, min_leaf, hw, hp, hc)
            if nonempty >= 2:
                visited += 1
            if b >= 0 and s < best_score:
                best_score = s
                best_f = f
                best_b = b
            if visited >= max_features and best_f >= 0:
                break
        if best_f < 0:
            continue
        # partition rows in place: codes <= best_b go left
        cf = codes[best_f]
        i = start
        j2 = end - 1
        while i <= j2:
            if cf[rows[i]] <= best_b:
                i += 1
            else:
                tmp = rows[i]
                rows[i] = rows[j2]
                rows[j2] = tmp
                j2 -= 1
        mid = i
        importance[best_f] += (_gini_sum(W, P) - best_score) / W_root
        feature[node] = best_f
        split_bin[node] = best_b
        l = n_nodes
        r_ = n_nodes + 1
        n_nodes += 2
        left[node] = l
        right[node] = r_
        stack_node[sp] = r_
        stack_start[sp] = mid
        stack_end[sp] = end
        stack_depth[sp] = depth + 1
        sp += 1
        stack_node[sp] = l
        stack_start[sp] = start
        stack_end[sp] = mid
        stack_depth[sp] = depth + 1
        sp += 1
    return (feature[:n_nodes].copy(), split_bin[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), value[:n_nodes].copy(), importance)


@njit(cache=True)
def predict_tree(X, feature, threshold, left, right, value):
    n = X.shape[0]
    out = np.empty(n)
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]
    return out


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    importance: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    @property
    def n_leaves(self) -> int:
        return int(np.count_nonzero(self.feature < 0))

    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def predict(self, X: np.ndarray) -> np.ndarray:
        return predict_tree(np.ascontiguousarray(X, dtype=np.float64), self.feature, self.threshold,
                            self.left, self.right, self.value)

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("feature", "threshold", "left", "right", "value", "importance")}

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(np.asarray(d["feature"], dtype=np.int32), np.asarray(d["threshold"], dtype=np.float64),
                   np.asarray(d["left"], dtype=np.int32), np.asarray(d["right"], dtype=np.int32),
                   np.asarray(d["value"], dtype=np.float64), np.asarray(d["importance"], dtype=np.float64))


def grow(binning: Binning, y: np.ndarray, weight: np.ndarray, count: np.ndarray, max_features: int,
         min_samples_leaf: int, max_depth: int | None, seed: int) -> Tree:
    feature, split_bin, left, right, value, importance = build_tree(
        binning.codes, binning.n_bins, np.asarray(y, dtype=np.float64), np.asarray(weight, dtype=np.float64),
        np.asarray(count, dtype=np.int64), int(max_features), int(min_samples_leaf),
        -1 if max_depth is None else int(max_depth), int(seed) & 0x7FFFFFFFFFFFFFFF)
    threshold = np.full(feature.size, np.nan)
    internal = np.flatnonzero(feature >= 0)
    for i in internal:
        threshold[i] = binning.thresholds[feature[i]][split_bin[i]]
    return Tree(feature, threshold, left, right, value, importance)
