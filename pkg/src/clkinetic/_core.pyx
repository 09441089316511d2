# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: scaled I0 and polynomial exit-time root finding.

Mirrors ``_core_py`` line for line; node tables are passed in from Python so
both backends integrate with the same rule.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt, fabs, isfinite, NAN, isnan

cnp.import_array()

from clkinetic._core_py import (Y_SWITCH, PHI_WEIGHTS, COS_M1, U_WEIGHTS,
                                EXP_MU2, U2)

cdef double[::1] _cos_m1 = np.ascontiguousarray(COS_M1)
cdef double[::1] _phi_w = np.ascontiguousarray(PHI_WEIGHTS)
cdef double[::1] _u_w = np.ascontiguousarray(U_WEIGHTS)
cdef double[::1] _e_u2 = np.ascontiguousarray(EXP_MU2)
cdef double[::1] _u2 = np.ascontiguousarray(U2)
cdef double _y_switch = Y_SWITCH
cdef double PI = 3.141592653589793


cdef inline double _i0e_scalar(double y) nogil:
    cdef Py_ssize_t k
    cdef double acc = 0.0
    y = fabs(y)
    if y <= _y_switch:
        for k in range(_cos_m1.shape[0]):
            acc += _phi_w[k] * exp(y * _cos_m1[k])
        return acc / PI
    for k in range(_u2.shape[0]):
        acc += _u_w[k] * _e_u2[k] / sqrt(1.0 - _u2[k] / (2.0 * y))
    return (2.0 / PI) / sqrt(2.0 * y) * acc


def i0e(y):
    arr = np.asarray(y, dtype=float)
    flat = np.ascontiguousarray(arr.reshape(-1))
    out = np.empty_like(flat)
    cdef double[::1] yv = flat
    cdef double[::1] ov = out
    cdef Py_ssize_t i, n = yv.shape[0]
    with nogil:
        for i in range(n):
            ov[i] = _i0e_scalar(yv[i])
    return out.reshape(arr.shape)


cdef inline double _poly(double[::1] coef, long[:, ::1] pw, double x0,
                         double x1, double x2) nogil:
    cdef Py_ssize_t k, j
    cdef double acc = 0.0, term
    for k in range(coef.shape[0]):
        term = coef[k]
        for j in range(pw[k, 0]):
            term *= x0
        for j in range(pw[k, 1]):
            term *= x1
        for j in range(pw[k, 2]):
            term *= x2
        acc += term
    return acc


def poly_eval(coef, powers, x):
    cdef double[::1] c = np.ascontiguousarray(coef, dtype=float)
    cdef long[:, ::1] pw = np.ascontiguousarray(powers, dtype=np.int_)
    cdef double[:, ::1] xv = np.ascontiguousarray(x, dtype=float)
    out = np.empty(xv.shape[0])
    cdef double[::1] ov = out
    cdef Py_ssize_t i
    with nogil:
        for i in range(xv.shape[0]):
            ov[i] = _poly(c, pw, xv[i, 0], xv[i, 1], xv[i, 2])
    return out


def poly_exit(coef, powers, gcoef, gpowers, X, V, double radius, double tol,
              int n_bisect=60):
    cdef double[::1] c = np.ascontiguousarray(coef, dtype=float)
    cdef long[:, ::1] pw = np.ascontiguousarray(powers, dtype=np.int_)
    cdef double[::1] gc0 = np.ascontiguousarray(gcoef[0], dtype=float)
    cdef double[::1] gc1 = np.ascontiguousarray(gcoef[1], dtype=float)
    cdef double[::1] gc2 = np.ascontiguousarray(gcoef[2], dtype=float)
    cdef long[:, ::1] gp0 = np.ascontiguousarray(gpowers[0], dtype=np.int_)
    cdef long[:, ::1] gp1 = np.ascontiguousarray(gpowers[1], dtype=np.int_)
    cdef long[:, ::1] gp2 = np.ascontiguousarray(gpowers[2], dtype=np.int_)
    cdef double[:, ::1] xv = np.ascontiguousarray(X, dtype=float)
    cdef double[:, ::1] vv = np.ascontiguousarray(V, dtype=float)
    cdef Py_ssize_t n = xv.shape[0], i
    t_out = np.zeros(n)
    st_out = np.zeros(n, dtype=np.int64)
    cdef double[::1] t = t_out
    cdef long long[::1] st = st_out
    cdef double x0, x1, x2, v0, v1, v2, p0, dp0, h, s, lo, hi, mid, val, ps, dps, s_new
    cdef int bd, k, it, found
    with nogil:
        for i in range(n):
            x0 = xv[i, 0]; x1 = xv[i, 1]; x2 = xv[i, 2]
            v0 = vv[i, 0]; v1 = vv[i, 1]; v2 = vv[i, 2]
            p0 = _poly(c, pw, x0, x1, x2)
            dp0 = -(v0 * _poly(gc0, gp0, x0, x1, x2) + v1 * _poly(gc1, gp1, x0, x1, x2)
                    + v2 * _poly(gc2, gp2, x0, x1, x2))
            if p0 > tol:
                st[i] = 1
                continue
            bd = fabs(p0) <= tol
            if bd and dp0 >= 0.0:
                st[i] = 2
                continue
            h = radius / (8.0 * sqrt(v0 * v0 + v1 * v1 + v2 * v2))
            lo = 0.0
            hi = 0.0
            found = 0
            for k in range(1, 17):
                s = k * h
                val = _poly(c, pw, x0 - s * v0, x1 - s * v1, x2 - s * v2)
                if bd:
                    val = (val - p0) / s
                if val > 0.0:
                    hi = s
                    found = 1
                    break
                lo = s
            if not found:
                hi = lo
                st[i] = 3
            for it in range(n_bisect):
                mid = 0.5 * (lo + hi)
                val = _poly(c, pw, x0 - mid * v0, x1 - mid * v1, x2 - mid * v2)
                if bd:
                    val = (val - p0) / mid if mid > 0.0 else val - p0
                if val > 0.0:
                    hi = mid
                else:
                    lo = mid
            s = 0.5 * (lo + hi)
            ps = _poly(c, pw, x0 - s * v0, x1 - s * v1, x2 - s * v2)
            dps = -(v0 * _poly(gc0, gp0, x0 - s * v0, x1 - s * v1, x2 - s * v2)
                    + v1 * _poly(gc1, gp1, x0 - s * v0, x1 - s * v1, x2 - s * v2)
                    + v2 * _poly(gc2, gp2, x0 - s * v0, x1 - s * v1, x2 - s * v2))
            if dps != 0.0:
                s_new = s - ps / dps
                if isfinite(s_new) and s_new >= lo and s_new <= hi:
                    s = s_new
            t[i] = s
    return t_out, st_out
