# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. Semantics are pinned by rhythmsim.kernels._fallback;
keep arithmetic order identical when editing either side."""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND = "native"


def unit_disk_pairs(x, y, double radius):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] xa = np.ascontiguousarray(x, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ya = np.ascontiguousarray(y, dtype=np.float64)
    cdef Py_ssize_t n = xa.shape[0]
    cdef double r2 = radius * radius
    cdef Py_ssize_t i, j, count
    cdef double dx, dy
    cdef double[::1] xv = xa
    cdef double[::1] yv = ya

    if n < 2:
        empty = np.zeros(0, dtype=np.int32)
        return empty, empty

    count = 0
    for i in range(n - 1):
        for j in range(i + 1, n):
            dx = xv[i] - xv[j]
            dy = yv[i] - yv[j]
            if dx * dx + dy * dy <= r2:
                count += 1

    cdef cnp.ndarray[cnp.int32_t, ndim=1] out_i = np.empty(count, dtype=np.int32)
    cdef cnp.ndarray[cnp.int32_t, ndim=1] out_j = np.empty(count, dtype=np.int32)
    cdef cnp.int32_t[::1] oi = out_i
    cdef cnp.int32_t[::1] oj = out_j
    cdef Py_ssize_t k = 0
    for i in range(n - 1):
        for j in range(i + 1, n):
            dx = xv[i] - xv[j]
            dy = yv[i] - yv[j]
            if dx * dx + dy * dy <= r2:
                oi[k] = <cnp.int32_t> i
                oj[k] = <cnp.int32_t> j
                k += 1
    return out_i, out_j


def linear_interp(xq, xp, fp):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] xqa = np.ascontiguousarray(xq, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] xpa = np.ascontiguousarray(xp, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] fpa = np.ascontiguousarray(fp, dtype=np.float64)
    cdef Py_ssize_t nq = xqa.shape[0]
    cdef Py_ssize_t np_ = xpa.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(nq, dtype=np.float64)
    cdef double[::1] q = xqa
    cdef double[::1] p = xpa
    cdef double[::1] f = fpa
    cdef double[::1] o = out
    cdef Py_ssize_t k, lo, hi, mid, idx
    cdef double v, x0, x1, frac

    for k in range(nq):
        v = q[k]
        # searchsorted(p, v, side="right") - 1
        lo = 0
        hi = np_
        while lo < hi:
            mid = (lo + hi) >> 1
            if p[mid] <= v:
                lo = mid + 1
            else:
                hi = mid
        idx = lo - 1
        if idx < 0:
            idx = 0
        elif idx > np_ - 2:
            idx = np_ - 2
        x0 = p[idx]
        x1 = p[idx + 1]
        frac = (v - x0) / (x1 - x0)
        if frac < 0.0:
            frac = 0.0
        elif frac > 1.0:
            frac = 1.0
        o[k] = f[idx] + (f[idx + 1] - f[idx]) * frac
    return out


def weighted_pick(cum_weights, uniforms):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] cw = np.ascontiguousarray(cum_weights, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] u = np.ascontiguousarray(uniforms, dtype=np.float64)
    cdef Py_ssize_t n = u.shape[0]
    cdef Py_ssize_t c = cw.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] out = np.empty(n, dtype=np.int64)
    cdef double[::1] cv = cw
    cdef double[::1] uv = u
    cdef cnp.int64_t[::1] ov = out
    cdef double total = cv[c - 1]
    cdef Py_ssize_t k, lo, hi, mid
    cdef double key

    for k in range(n):
        key = uv[k] * total
        # searchsorted(cw, key, side="right")
        lo = 0
        hi = c
        while lo < hi:
            mid = (lo + hi) >> 1
            if cv[mid] <= key:
                lo = mid + 1
            else:
                hi = mid
        ov[k] = <cnp.int64_t> lo
    return out
