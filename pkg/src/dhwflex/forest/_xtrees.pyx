# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled extra-trees kernels.

Must stay step-for-step identical to ``_fallback.py``: same RNG stream, same
node visiting order, same sequential summation order, so both backends grow
bit-identical trees.
"""
import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint64_t, int32_t
from libc.math cimport INFINITY

cnp.import_array()

cdef inline uint64_t _next(uint64_t* state) nogil:
    cdef uint64_t z
    state[0] += <uint64_t>0x9E3779B97F4A7C15ULL
    z = state[0]
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EBULL
    return z ^ (z >> 31)

cdef inline double _uniform(uint64_t* state) nogil:
    return (<double>(_next(state) >> 11) + 0.5) * (1.0 / 9007199254740992.0)


def build_tree(const double[:, ::1] X, const double[::1] y, int k_candidates, int n_min,
               uint64_t state):
    """Grow one tree on all rows. Returns node arrays (feature, threshold, left, right, value)."""
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t d = X.shape[1]
    cdef Py_ssize_t cap = 2 * n + 1
    feature_arr = np.full(cap, -1, dtype=np.int32)
    threshold_arr = np.zeros(cap, dtype=np.float64)
    left_arr = np.full(cap, -1, dtype=np.int32)
    right_arr = np.full(cap, -1, dtype=np.int32)
    value_arr = np.zeros(cap, dtype=np.float64)
    cdef int32_t[::1] feature = feature_arr
    cdef double[::1] threshold = threshold_arr
    cdef int32_t[::1] left = left_arr
    cdef int32_t[::1] right = right_arr
    cdef double[::1] value = value_arr

    cdef Py_ssize_t[::1] idx = np.arange(n, dtype=np.intp)
    cdef Py_ssize_t[::1] tmp = np.empty(n, dtype=np.intp)
    cdef Py_ssize_t[::1] st_node = np.empty(cap, dtype=np.intp)
    cdef Py_ssize_t[::1] st_start = np.empty(cap, dtype=np.intp)
    cdef Py_ssize_t[::1] st_end = np.empty(cap, dtype=np.intp)
    cdef double[::1] fmin = np.empty(d, dtype=np.float64)
    cdef double[::1] fmax = np.empty(d, dtype=np.float64)
    cdef Py_ssize_t[::1] cand = np.empty(d, dtype=np.intp)

    cdef Py_ssize_t top = 0, n_nodes = 1
    cdef Py_ssize_t node, start, end, m, i, j, f, r, n_cand, k_eff, nl, best_f, pos_l, pos_r, s
    cdef double sum_y, y0, v, sum_l, sum_r, score, best_score, thr, best_thr, u
    cdef bint constant

    st_node[0] = 0
    st_start[0] = 0
    st_end[0] = n
    top = 1
    with nogil:
        while top > 0:
            top -= 1
            node = st_node[top]
            start = st_start[top]
            end = st_end[top]
            m = end - start
            sum_y = 0.0
            for i in range(start, end):
                sum_y = sum_y + y[idx[i]]
            value[node] = sum_y / m
            if m < n_min:
                continue
            y0 = y[idx[start]]
            constant = True
            for i in range(start + 1, end):
                if y[idx[i]] != y0:
                    constant = False
                    break
            if constant:
                continue
            for f in range(d):
                fmin[f] = X[idx[start], f]
                fmax[f] = fmin[f]
            for i in range(start + 1, end):
                s = idx[i]
                for f in range(d):
                    v = X[s, f]
                    if v < fmin[f]:
                        fmin[f] = v
                    elif v > fmax[f]:
                        fmax[f] = v
            n_cand = 0
            for f in range(d):
                if fmax[f] > fmin[f]:
                    cand[n_cand] = f
                    n_cand += 1
            if n_cand == 0:
                continue
            k_eff = k_candidates if k_candidates < n_cand else n_cand
            for j in range(k_eff):
                r = j + <Py_ssize_t>(_next(&state) % <uint64_t>(n_cand - j))
                f = cand[j]
                cand[j] = cand[r]
                cand[r] = f
            best_score = -INFINITY
            best_f = -1
            best_thr = 0.0
            for j in range(k_eff):
                f = cand[j]
                u = _uniform(&state)
                thr = fmin[f] + u * (fmax[f] - fmin[f])
                nl = 0
                sum_l = 0.0
                for i in range(start, end):
                    s = idx[i]
                    if X[s, f] < thr:
                        nl += 1
                        sum_l = sum_l + y[s]
                if nl == 0 or nl == m:
                    continue
                sum_r = sum_y - sum_l
                score = sum_l * sum_l / nl + sum_r * sum_r / (m - nl)
                if score > best_score:
                    best_score = score
                    best_f = f
                    best_thr = thr
            if best_f < 0:
                continue
            # stable partition
            pos_l = start
            pos_r = 0
            for i in range(start, end):
                s = idx[i]
                if X[s, best_f] < best_thr:
                    idx[pos_l] = s
                    pos_l += 1
                else:
                    tmp[pos_r] = s
                    pos_r += 1
            for i in range(pos_r):
                idx[pos_l + i] = tmp[i]
            feature[node] = <int32_t>best_f
            threshold[node] = best_thr
            left[node] = <int32_t>n_nodes
            right[node] = <int32_t>(n_nodes + 1)
            st_node[top] = n_nodes + 1
            st_start[top] = pos_l
            st_end[top] = end
            top += 1
            st_node[top] = n_nodes
            st_start[top] = start
            st_end[top] = pos_l
            top += 1
            n_nodes += 2
    return (feature_arr[:n_nodes].copy(), threshold_arr[:n_nodes].copy(), left_arr[:n_nodes].copy(),
            right_arr[:n_nodes].copy(), value_arr[:n_nodes].copy())


def predict(const double[:, ::1] X, const int32_t[::1] feature, const double[::1] threshold,
            const int32_t[::1] left, const int32_t[::1] right, const double[::1] value,
            const int32_t[::1] roots):
    """Mean over trees of the leaf value reached by each row."""
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t n_trees = roots.shape[0]
    out_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, t
    cdef int32_t node, f
    with nogil:
        for t in range(n_trees):
            for i in range(n):
                node = roots[t]
                f = feature[node]
                while f >= 0:
                    if X[i, f] < threshold[node]:
                        node = left[node]
                    else:
                        node = right[node]
                    f = feature[node]
                out[i] = out[i] + value[node]
        for i in range(n):
            out[i] = out[i] / n_trees
    return out_arr
