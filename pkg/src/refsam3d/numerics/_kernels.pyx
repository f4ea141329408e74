# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled unfold/fold kernels for 3D convolution.

Both kernels operate on zero-padded, C-contiguous 5D arrays laid out as
(B, C, D, H, W). The column matrix has rows ordered (c, kd, kh, kw) and
columns ordered (od, oh, ow), matching ``weight.reshape(C_out, -1)``.
"""

cimport cython
from cython cimport floating
from libc.string cimport memcpy

import numpy as np


def vol2col(floating[:, :, :, :, ::1] x, int kd, int kh, int kw,
            int sd, int sh, int sw, int od, int oh, int ow):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1]
    cdef Py_ssize_t Dp = x.shape[2], Hp = x.shape[3], Wp = x.shape[4]
    cdef Py_ssize_t K = kd * kh * kw, P = od * oh * ow
    dtype = np.float32 if floating is float else np.float64
    out = np.empty((B, C * K, P), dtype=dtype)
    if out.size == 0 or x.size == 0:
        return out
    cdef floating[:, :, ::1] cols = out
    cdef floating* src = &x[0, 0, 0, 0, 0]
    cdef floating* dst = &cols[0, 0, 0]
    cdef floating* s
    cdef floating* d
    cdef Py_ssize_t vol = Dp * Hp * Wp
    cdef Py_ssize_t bc, a, i, j, zd, zh, zw
    cdef size_t nbytes = ow * sizeof(floating)
    with nogil:
        for bc in range(B * C):
            for a in range(kd):
                for i in range(kh):
                    for j in range(kw):
                        for zd in range(od):
                            for zh in range(oh):
                                s = src + bc * vol + ((zd * sd + a) * Hp + zh * sh + i) * Wp + j
                                if sw == 1:
                                    memcpy(dst, s, nbytes)
                                else:
                                    for zw in range(ow):
                                        dst[zw] = s[zw * sw]
                                dst += ow
    return out


def col2vol(floating[:, :, ::1] cols, int C, int dp, int hp, int wp,
            int kd, int kh, int kw, int sd, int sh, int sw,
            int od, int oh, int ow):
    cdef Py_ssize_t B = cols.shape[0]
    dtype = np.float32 if floating is float else np.float64
    out = np.zeros((B, C, dp, hp, wp), dtype=dtype)
    if out.size == 0 or cols.size == 0:
        return out
    cdef floating[:, :, :, :, ::1] x = out
    cdef floating* dst = &x[0, 0, 0, 0, 0]
    cdef floating* src = &cols[0, 0, 0]
    cdef floating* d
    cdef Py_ssize_t vol = dp * hp * wp
    cdef Py_ssize_t bc, a, i, j, zd, zh, zw
    with nogil:
        for bc in range(B * C):
            for a in range(kd):
                for i in range(kh):
                    for j in range(kw):
                        for zd in range(od):
                            for zh in range(oh):
                                d = dst + bc * vol + ((zd * sd + a) * hp + zh * sh + i) * wp + j
                                if sw == 1:
                                    for zw in range(ow):
                                        d[zw] += src[zw]
                                else:
                                    for zw in range(ow):
                                        d[zw * sw] += src[zw]
                                src += ow
    return out
