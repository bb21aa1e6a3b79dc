# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled tree-traversal kernels; semantics match treevade._core.fallback."""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()


def margin_one(flat, x):
    cdef const int[::1] feature = flat.feature
    cdef const double[::1] threshold = flat.threshold
    cdef const int[::1] yes = flat.yes
    cdef const int[::1] no = flat.no
    cdef const double[::1] value = flat.value
    cdef const int[::1] root = flat.root
    cdef const double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double total = flat.bias
    cdef Py_ssize_t t
    cdef int node, f
    with nogil:
        for t in range(root.shape[0]):
            node = root[t]
            f = feature[node]
            while f >= 0:
                if xv[f] < threshold[node]:
                    node = yes[node]
                else:
                    node = no[node]
                f = feature[node]
            total += value[node]
    return float(total)


def margin_many(flat, X):
    cdef const int[::1] feature = flat.feature
    cdef const double[::1] threshold = flat.threshold
    cdef const int[::1] yes = flat.yes
    cdef const int[::1] no = flat.no
    cdef const double[::1] value = flat.value
    cdef const int[::1] root = flat.root
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef Py_ssize_t n = Xv.shape[0]
    out_arr = np.full(n, flat.bias, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, t
    cdef int node, f
    with nogil:
        for i in range(n):
            for t in range(root.shape[0]):
                node = root[t]
                f = feature[node]
                while f >= 0:
                    if Xv[i, f] < threshold[node]:
                        node = yes[node]
                    else:
                        node = no[node]
                    f = feature[node]
                out[i] += value[node]
    return out_arr


def leaf_values_at(flat, x):
    cdef const int[::1] feature = flat.feature
    cdef const double[::1] threshold = flat.threshold
    cdef const int[::1] yes = flat.yes
    cdef const int[::1] no = flat.no
    cdef const double[::1] value = flat.value
    cdef const int[::1] root = flat.root
    cdef const double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    out_arr = np.empty(root.shape[0], dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t t
    cdef int node, f
    with nogil:
        for t in range(root.shape[0]):
            node = root[t]
            f = feature[node]
            while f >= 0:
                if xv[f] < threshold[node]:
                    node = yes[node]
                else:
                    node = no[node]
                f = feature[node]
            out[t] = value[node]
    return out_arr


def single_change_tuples(flat, x):
    """See treevade._core.fallback.single_change_tuples."""
    cdef const int[::1] feature = flat.feature
    cdef const double[::1] threshold = flat.threshold
    cdef const int[::1] yes = flat.yes
    cdef const int[::1] no = flat.no
    cdef const double[::1] value = flat.value
    cdef const int[::1] root = flat.root
    cdef const double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n_nodes = feature.shape[0]
    cdef Py_ssize_t d = flat.n_features

    lo_arr = np.full(d, -np.inf, dtype=np.float64)
    hi_arr = np.full(d, np.inf, dtype=np.float64)
    cdef double[::1] lo = lo_arr
    cdef double[::1] hi = hi_arr

    # Each leaf emits at most one tuple.
    cdef Py_ssize_t max_tuples = 0
    cdef Py_ssize_t i
    for i in range(n_nodes):
        if feature[i] < 0:
            max_tuples += 1
    out_feat_arr = np.empty(max_tuples, dtype=np.int64)
    out_lo_arr = np.empty(max_tuples, dtype=np.float64)
    out_hi_arr = np.empty(max_tuples, dtype=np.float64)
    out_delta_arr = np.empty(max_tuples, dtype=np.float64)
    cdef long[::1] out_feat = out_feat_arr
    cdef double[::1] out_lo = out_lo_arr
    cdef double[::1] out_hi = out_hi_arr
    cdef double[::1] out_delta = out_delta_arr

    # DFS stack; each visit pushes at most 3 entries (undo + two children).
    cdef Py_ssize_t cap = 3 * n_nodes + 8
    stack_node_arr = np.empty(cap, dtype=np.int32)
    stack_nf_arr = np.empty(cap, dtype=np.int32)
    stack_lo_arr = np.empty(cap, dtype=np.float64)
    stack_hi_arr = np.empty(cap, dtype=np.float64)
    stack_changed_arr = np.empty(cap, dtype=np.int32)
    stack_entered_arr = np.empty(cap, dtype=np.uint8)
    cdef int[::1] s_node = stack_node_arr
    cdef int[::1] s_nf = stack_nf_arr
    cdef double[::1] s_lo = stack_lo_arr
    cdef double[::1] s_hi = stack_hi_arr
    cdef int[::1] s_changed = stack_changed_arr
    cdef unsigned char[::1] s_entered = stack_entered_arr

    cdef Py_ssize_t count = 0, visits = 0, top, t
    cdef int node, f, nf, changed, base_node
    cdef double base_value, tau, xf, new_lo, new_hi, push_lo, push_hi
    cdef bint inside

    with nogil:
        for t in range(root.shape[0]):
            base_node = root[t]
            f = feature[base_node]
            while f >= 0:
                if xv[f] < threshold[base_node]:
                    base_node = yes[base_node]
                else:
                    base_node = no[base_node]
                f = feature[base_node]
            base_value = value[base_node]

            top = 0
            s_node[0] = root[t]
            s_nf[0] = -1
            s_changed[0] = -1
            s_entered[0] = 0
            top = 1
            while top > 0:
                top -= 1
                node = s_node[top]
                nf = s_nf[top]
                changed = s_changed[top]
                if s_entered[top]:
                    lo[nf] = s_lo[top]
                    hi[nf] = s_hi[top]
                    continue
                if nf >= 0:
                    push_lo = s_lo[top]
                    push_hi = s_hi[top]
                    # Undo record, then narrow the box for this branch.
                    s_node[top] = node
                    s_nf[top] = nf
                    s_lo[top] = lo[nf]
                    s_hi[top] = hi[nf]
                    s_changed[top] = changed
                    s_entered[top] = 1
                    top += 1
                    if push_lo > lo[nf]:
                        lo[nf] = push_lo
                    if push_hi < hi[nf]:
                        hi[nf] = push_hi
                f = feature[node]
                if f < 0:
                    if changed >= 0:
                        out_feat[count] = changed
                        out_lo[count] = lo[changed]
                        out_hi[count] = hi[changed]
                        out_delta[count] = value[node] - base_value
                        count += 1
                    continue
                visits += 1
                tau = threshold[node]
                xf = xv[f]
                # False branch pushed first so the true branch pops first.
                new_lo = lo[f] if lo[f] > tau else tau
                if new_lo < hi[f]:
                    inside = new_lo <= xf < hi[f]
                    if inside or changed == -1 or changed == f:
                        s_node[top] = no[node]
                        s_nf[top] = f
                        s_lo[top] = new_lo
                        s_hi[top] = hi[f]
                        s_changed[top] = changed if inside else f
                        s_entered[top] = 0
                        top += 1
                new_hi = hi[f] if hi[f] < tau else tau
                if lo[f] < new_hi:
                    inside = lo[f] <= xf < new_hi
                    if inside or changed == -1 or changed == f:
                        s_node[top] = yes[node]
                        s_nf[top] = f
                        s_lo[top] = lo[f]
                        s_hi[top] = new_hi
                        s_changed[top] = changed if inside else f
                        s_entered[top] = 0
                        top += 1

    return (out_feat_arr[:count], out_lo_arr[:count], out_hi_arr[:count],
            out_delta_arr[:count], int(visits))


def tree_range(flat, tree, lo, hi):
    cdef const int[::1] feature = flat.feature
    cdef const double[::1] threshold = flat.threshold
    cdef const int[::1] yes = flat.yes
    cdef const int[::1] no = flat.no
    cdef const double[::1] value = flat.value
    cdef const int[::1] root = flat.root
    cdef const double[::1] lov = np.ascontiguousarray(lo, dtype=np.float64)
    cdef const double[::1] hiv = np.ascontiguousarray(hi, dtype=np.float64)
    stack_arr = np.empty(feature.shape[0] + 1, dtype=np.int32)
    cdef int[::1] stack = stack_arr
    cdef double mn, mx
    _range_one(feature, threshold, yes, no, value, lov, hiv, stack,
               root[tree], &mn, &mx)
    return mn, mx


def tree_ranges(flat, lo, hi):
    cdef const int[::1] feature = flat.feature
    cdef const double[::1] threshold = flat.threshold
    cdef const int[::1] yes = flat.yes
    cdef const int[::1] no = flat.no
    cdef const double[::1] value = flat.value
    cdef const int[::1] root = flat.root
    cdef const double[::1] lov = np.ascontiguousarray(lo, dtype=np.float64)
    cdef const double[::1] hiv = np.ascontiguousarray(hi, dtype=np.float64)
    mins_arr = np.empty(root.shape[0], dtype=np.float64)
    maxs_arr = np.empty(root.shape[0], dtype=np.float64)
    cdef double[::1] mins = mins_arr
    cdef double[::1] maxs = maxs_arr
    stack_arr = np.empty(feature.shape[0] + 1, dtype=np.int32)
    cdef int[::1] stack = stack_arr
    cdef Py_ssize_t t
    cdef double mn, mx
    with nogil:
        for t in range(root.shape[0]):
            _range_one(feature, threshold, yes, no, value, lov, hiv, stack,
                       root[t], &mn, &mx)
            mins[t] = mn
            maxs[t] = mx
    return mins_arr, maxs_arr


cdef void _range_one(const int[::1] feature, const double[::1] threshold,
                     const int[::1] yes, const int[::1] no,
                     const double[::1] value, const double[::1] lo,
                     const double[::1] hi, int[::1] stack, int start,
                     double* mn, double* mx) noexcept nogil:
    cdef Py_ssize_t top = 0
    cdef int node, f
    cdef double v, tau
    mn[0] = INFINITY
    mx[0] = -INFINITY
    stack[top] = start
    top = 1
    while top > 0:
        top -= 1
        node = stack[top]
        f = feature[node]
        if f < 0:
            v = value[node]
            if v < mn[0]:
                mn[0] = v
            if v > mx[0]:
                mx[0] = v
            continue
        tau = threshold[node]
        if lo[f] < tau:
            stack[top] = yes[node]
            top += 1
        if hi[f] > tau:
            stack[top] = no[node]
            top += 1
