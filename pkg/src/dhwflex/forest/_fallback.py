"""Pure-Python extra-trees kernels, used when the compiled extension is absent.

Mirrors ``_xtrees.pyx`` exactly. Sums use ``np.cumsum(...)[-1]`` because
cumsum accumulates left to right like the C loops, whereas ``np.sum`` uses
pairwise summation and would differ in the last bits.
"""
from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1


class SplitMix64:
    def __init__(self, state: int):
        self.state = state & MASK64

    def next(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def uniform(self) -> float:
        return ((self.next() >> 11) + 0.5) * (1.0 / 9007199254740992.0)


def _seqsum(a) -> float:
    return float(np.cumsum(a)[-1]) if len(a) else 0.0


def build_tree(X, y, k_candidates: int, n_min: int, state: int):
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    n, d = X.shape
    rng = SplitMix64(state)
    feature, threshold, left, right, value = [-1], [0.0], [-1], [-1], [0.0]
    idx = np.arange(n)
    stack = [(0, 0, n)]
    while stack:
        node, start, end = stack.pop()
        seg = idx[start:end]
        m = end - start
        ys = y[seg]
        sum_y = _seqsum(ys)
        value[node] = sum_y / m
        if m < n_min or np.all(ys == ys[0]):
            continue
        xs = X[seg]
        fmin = xs.min(axis=0)
        fmax = xs.max(axis=0)
        cand = [f for f in range(d) if fmax[f] > fmin[f]]
        if not cand:
            continue
        n_cand = len(cand)
        k_eff = min(k_candidates, n_cand)
        for j in range(k_eff):
            r = j + rng.next() % (n_cand - j)
            cand[j], cand[r] = cand[r], cand[j]
        best_score, best_f, best_thr = -np.inf, -1, 0.0
        for f in cand[:k_eff]:
            u = rng.uniform()
            thr = fmin[f] + u * (fmax[f] - fmin[f])
            mask = xs[:, f] < thr
            nl = int(mask.sum())
            if nl == 0 or nl == m:
                continue
            sum_l = _seqsum(ys[mask])
            sum_r = sum_y - sum_l
            score = sum_l * sum_l / nl + sum_r * sum_r / (m - nl)
            if score > best_score:
                best_score, best_f, best_thr = score, f, thr
        if best_f < 0:
            continue
        mask = xs[:, best_f] < best_thr
        pos_l = start + int(mask.sum())
        idx[start:end] = np.concatenate([seg[mask], seg[~mask]])
        nid = len(feature)
        feature[node], threshold[node], left[node], right[node] = best_f, best_thr, nid, nid + 1
        for _ in range(2):
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(0.0)
        stack.append((nid + 1, pos_l, end))
        stack.append((nid, start, pos_l))
    return (np.array(feature, dtype=np.int32), np.array(threshold), np.array(left, dtype=np.int32),
            np.array(right, dtype=np.int32), np.array(value))


def predict(X, feature, threshold, left, right, value, roots):
    X = np.ascontiguousarray(X, dtype=np.float64)
    n = X.shape[0]
    out = np.zeros(n)
    rows = np.arange(n)
    for root in roots:
        node = np.full(n, root, dtype=np.int64)
        f = feature[node]
        internal = f >= 0
        while internal.any():
            r = rows[internal]
            nd = node[r]
            go_left = X[r, f[r]] < threshold[nd]
            node[r] = np.where(go_left, left[nd], right[nd])
            f = feature[node]
            internal = f >= 0
        out += value[node]
    return out / len(roots)
