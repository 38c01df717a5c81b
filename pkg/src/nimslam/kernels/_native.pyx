# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the kernels in ``_numpy.py``.

Same call signatures and semantics; the scatter kernel in particular avoids
the heavy bookkeeping of ``np.add.at``. Single-threaded on purpose so
accumulation order (and therefore every run) is deterministic.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND = "native"


def tri_gather(double[:, :, :, ::1] values, long long[:, ::1] base,
               double[:, ::1] frac):
    cdef Py_ssize_t n = base.shape[0]
    cdef Py_ssize_t c = values.shape[3]
    out_arr = np.empty((n, c), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, k, bx, by, bz
    cdef double fx, fy, fz, gx, gy, gz
    for i in range(n):
        bx = base[i, 0]; by = base[i, 1]; bz = base[i, 2]
        fx = frac[i, 0]; fy = frac[i, 1]; fz = frac[i, 2]
        gx = 1.0 - fx; gy = 1.0 - fy; gz = 1.0 - fz
        for k in range(c):
            out[i, k] = (
                gx * gy * gz * values[bx, by, bz, k]
                + gx * gy * fz * values[bx, by, bz + 1, k]
                + gx * fy * gz * values[bx, by + 1, bz, k]
                + gx * fy * fz * values[bx, by + 1, bz + 1, k]
                + fx * gy * gz * values[bx + 1, by, bz, k]
                + fx * gy * fz * values[bx + 1, by, bz + 1, k]
                + fx * fy * gz * values[bx + 1, by + 1, bz, k]
                + fx * fy * fz * values[bx + 1, by + 1, bz + 1, k]
            )
    return out_arr


def tri_gather_posgrad(double[:, :, :, ::1] values, long long[:, ::1] base,
                       double[:, ::1] frac, double[:, ::1] gout):
    cdef Py_ssize_t n = base.shape[0]
    cdef Py_ssize_t c = values.shape[3]
    gfrac_arr = np.zeros((n, 3), dtype=np.float64)
    cdef double[:, ::1] gfrac = gfrac_arr
    cdef Py_ssize_t i, k, bx, by, bz
    cdef double fx, fy, fz, gx, gy, gz, g
    cdef double v000, v001, v010, v011, v100, v101, v110, v111
    for i in range(n):
        bx = base[i, 0]; by = base[i, 1]; bz = base[i, 2]
        fx = frac[i, 0]; fy = frac[i, 1]; fz = frac[i, 2]
        gx = 1.0 - fx; gy = 1.0 - fy; gz = 1.0 - fz
        for k in range(c):
            v000 = values[bx, by, bz, k]
            v001 = values[bx, by, bz + 1, k]
            v010 = values[bx, by + 1, bz, k]
            v011 = values[bx, by + 1, bz + 1, k]
            v100 = values[bx + 1, by, bz, k]
            v101 = values[bx + 1, by, bz + 1, k]
            v110 = values[bx + 1, by + 1, bz, k]
            v111 = values[bx + 1, by + 1, bz + 1, k]
            g = gout[i, k]
            gfrac[i, 0] += g * (
                gy * gz * (v100 - v000) + gy * fz * (v101 - v001)
                + fy * gz * (v110 - v010) + fy * fz * (v111 - v011)
            )
            gfrac[i, 1] += g * (
                gx * gz * (v010 - v000) + gx * fz * (v011 - v001)
                + fx * gz * (v110 - v100) + fx * fz * (v111 - v101)
            )
            gfrac[i, 2] += g * (
                gx * gy * (v001 - v000) + gx * fy * (v011 - v010)
                + fx * gy * (v101 - v100) + fx * fy * (v111 - v110)
            )
    return gfrac_arr


def tri_scatter_add(double[:, :, :, ::1] grad_values, long long[:, ::1] base,
                    double[:, ::1] frac, double[:, ::1] gout):
    cdef Py_ssize_t n = base.shape[0]
    cdef Py_ssize_t c = grad_values.shape[3]
    cdef Py_ssize_t i, k, bx, by, bz
    cdef double fx, fy, fz, gx, gy, gz, g
    for i in range(n):
        bx = base[i, 0]; by = base[i, 1]; bz = base[i, 2]
        fx = frac[i, 0]; fy = frac[i, 1]; fz = frac[i, 2]
        gx = 1.0 - fx; gy = 1.0 - fy; gz = 1.0 - fz
        for k in range(c):
            g = gout[i, k]
            grad_values[bx, by, bz, k] += gx * gy * gz * g
            grad_values[bx, by, bz + 1, k] += gx * gy * fz * g
            grad_values[bx, by + 1, bz, k] += gx * fy * gz * g
            grad_values[bx, by + 1, bz + 1, k] += gx * fy * fz * g
            grad_values[bx + 1, by, bz, k] += fx * gy * gz * g
            grad_values[bx + 1, by, bz + 1, k] += fx * gy * fz * g
            grad_values[bx + 1, by + 1, bz, k] += fx * fy * gz * g
            grad_values[bx + 1, by + 1, bz + 1, k] += fx * fy * fz * g


def bilinear_gather(double[:, :, ::1] img, double[::1] x, double[::1] y):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t H = img.shape[0]
    cdef Py_ssize_t W = img.shape[1]
    cdef Py_ssize_t c = img.shape[2]
    out_arr = np.empty((n, c), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, k, bx, by
    cdef double fx, fy, gx, gy
    for i in range(n):
        bx = <Py_ssize_t>x[i]
        by = <Py_ssize_t>y[i]
        if bx > W - 2: bx = W - 2
        if by > H - 2: by = H - 2
        if bx < 0: bx = 0
        if by < 0: by = 0
        fx = x[i] - bx; fy = y[i] - by
        gx = 1.0 - fx; gy = 1.0 - fy
        for k in range(c):
            out[i, k] = (
                gy * gx * img[by, bx, k] + gy * fx * img[by, bx + 1, k]
                + fy * gx * img[by + 1, bx, k] + fy * fx * img[by + 1, bx + 1, k]
            )
    return out_arr


def bilinear_posgrad(double[:, :, ::1] img, double[::1] x, double[::1] y,
                     double[:, ::1] gout):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t H = img.shape[0]
    cdef Py_ssize_t W = img.shape[1]
    cdef Py_ssize_t c = img.shape[2]
    gx_arr = np.zeros(n, dtype=np.float64)
    gy_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] gxo = gx_arr
    cdef double[::1] gyo = gy_arr
    cdef Py_ssize_t i, k, bx, by
    cdef double fx, fy, g
    for i in range(n):
        bx = <Py_ssize_t>x[i]
        by = <Py_ssize_t>y[i]
        if bx > W - 2: bx = W - 2
        if by > H - 2: by = H - 2
        if bx < 0: bx = 0
        if by < 0: by = 0
        fx = x[i] - bx; fy = y[i] - by
        for k in range(c):
            g = gout[i, k]
            gxo[i] += g * ((1.0 - fy) * (img[by, bx + 1, k] - img[by, bx, k])
                           + fy * (img[by + 1, bx + 1, k] - img[by + 1, bx, k]))
            gyo[i] += g * ((1.0 - fx) * (img[by + 1, bx, k] - img[by, bx, k])
                           + fx * (img[by + 1, bx + 1, k] - img[by, bx + 1, k]))
    return gx_arr, gy_arr
