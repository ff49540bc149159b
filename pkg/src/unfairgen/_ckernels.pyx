# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled combinatorial kernels; twin of ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log1p, fabs

cnp.import_array()

ctypedef cnp.int64_t i64
ctypedef cnp.uint8_t u8


def pack_bits(bits):
    cdef const u8[:, ::1] b = np.ascontiguousarray(bits, dtype=np.uint8)
    cdef Py_ssize_t n = b.shape[0], d = b.shape[1], r, c
    if d > 62:
        raise ValueError("dimension above 62 cannot be packed into int64 codes")
    out = np.zeros(n, dtype=np.int64)
    cdef i64[::1] o = out
    cdef i64 code
    for r in range(n):
        code = 0
        for c in range(d):
            code = (code << 1) | (b[r, c] & 1)
        o[r] = code
    return out


def unpack_codes(codes, Py_ssize_t d):
    cdef const i64[::1] cs = np.ascontiguousarray(codes, dtype=np.int64)
    cdef Py_ssize_t n = cs.shape[0], r, c
    out = np.empty((n, d), dtype=np.uint8)
    cdef u8[:, ::1] o = out
    for r in range(n):
        for c in range(d):
            o[r, c] = (cs[r] >> (d - 1 - c)) & 1
    return out


def best_split(bits, y, w, allowed, Py_ssize_t min_leaf):
    cdef const u8[:, ::1] b = np.ascontiguousarray(bits, dtype=np.uint8)
    cdef const double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef const double[::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef const u8[::1] ok = np.ascontiguousarray(allowed, dtype=np.uint8)
    cdef Py_ssize_t n = b.shape[0], d = b.shape[1], r, f, nr
    cdef double total_w = 0.0, wy = 0.0, mean, yc, parent = 0.0, wyc = 0.0
    cdef double w_r, wy_r, wyy_r, w_l, wy_l, wyy_l, sse_l, sse_r, gain
    cdef double best_gain = 0.0
    cdef Py_ssize_t best_f = -1

    for r in range(n):
        total_w += wv[r]
        wy += wv[r] * yv[r]
    mean = wy / total_w
    for r in range(n):
        yc = yv[r] - mean
        parent += wv[r] * yc * yc
        wyc += wv[r] * yc

    for f in range(d):
        if not ok[f]:
            continue
        nr = 0
        w_r = 0.0
        wy_r = 0.0
        wyy_r = 0.0
        for r in range(n):
            if b[r, f]:
                yc = yv[r] - mean
                nr += 1
                w_r += wv[r]
                wy_r += wv[r] * yc
                wyy_r += wv[r] * yc * yc
        if nr < min_leaf or n - nr < min_leaf:
            continue
        w_l = total_w - w_r
        if w_l <= 0.0 or w_r <= 0.0:
            continue
        wy_l = wyc - wy_r
        wyy_l = parent - wyy_r
        sse_l = wyy_l - wy_l * wy_l / w_l
        sse_r = wyy_r - wy_r * wy_r / w_r
        gain = parent - sse_l - sse_r
        if best_f < 0 or gain > best_gain + 1e-12 * max(1.0, fabs(best_gain)):
            best_f = f
            best_gain = gain
    return int(best_f), float(best_gain)


cdef inline double _softplus(double x) nogil:
    if x > 0:
        return x + log1p(exp(-x))
    return log1p(exp(x))


def softplus(x):
    arr = np.ascontiguousarray(x, dtype=np.float64)
    flat = arr.reshape(-1)
    out = np.empty_like(flat)
    cdef const double[::1] xv = flat
    cdef double[::1] o = out
    cdef Py_ssize_t i
    for i in range(xv.shape[0]):
        o[i] = _softplus(xv[i])
    return out.reshape(arr.shape)


def eval_landscape_codes(codes, Py_ssize_t d, double offset, linear, pair_i, pair_j, pair_w,
                         cohort_mask, cohort_value, cohort_boost):
    cdef const i64[::1] cs = np.ascontiguousarray(codes, dtype=np.int64)
    cdef const double[::1] lin = np.ascontiguousarray(linear, dtype=np.float64)
    cdef const i64[::1] pi = np.ascontiguousarray(pair_i, dtype=np.int64)
    cdef const i64[::1] pj = np.ascontiguousarray(pair_j, dtype=np.int64)
    cdef const double[::1] pw = np.ascontiguousarray(pair_w, dtype=np.float64)
    cdef const i64[::1] cm = np.ascontiguousarray(cohort_mask, dtype=np.int64)
    cdef const i64[::1] cv = np.ascontiguousarray(cohort_value, dtype=np.int64)
    cdef const double[::1] cb = np.ascontiguousarray(cohort_boost, dtype=np.float64)
    cdef Py_ssize_t n = cs.shape[0], r, i, m
    cdef i64 code
    cdef double s
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for r in range(n):
            code = cs[r]
            s = offset
            for i in range(d):
                if (code >> (d - 1 - i)) & 1:
                    s = s + lin[i]
            for m in range(pi.shape[0]):
                if ((code >> (d - 1 - pi[m])) & 1) and ((code >> (d - 1 - pj[m])) & 1):
                    s = s + pw[m]
            for m in range(cm.shape[0]):
                if (code & cm[m]) == cv[m]:
                    s = s + cb[m]
            o[r] = _softplus(s)
    return out


def expand_completions(fixed_mask, fixed_value, Py_ssize_t d):
    cdef i64 mask = int(fixed_mask)
    cdef i64 value = int(fixed_value) & mask
    cdef i64[64] free
    cdef Py_ssize_t u = 0, p, k
    for p in range(d):
        if not (mask >> p) & 1:
            free[u] = p
            u += 1
    cdef i64 total = (<i64>1) << u
    out = np.empty(total, dtype=np.int64)
    cdef i64[::1] o = out
    cdef i64 idx, code
    for idx in range(total):
        code = value
        for k in range(u):
            if (idx >> k) & 1:
                code |= (<i64>1) << free[k]
        o[idx] = code
    return out
