"""Pure-numpy unfold/fold kernels; same contract as the compiled ``_kernels``."""

import numpy as np
from numpy.lib.stride_tricks import as_strided


def vol2col(x, kd, kh, kw, sd, sh, sw, od, oh, ow):
    B, C = x.shape[:2]
    sB, sC, sD, sH, sW = x.strides
    view = as_strided(
        x,
        shape=(B, C, kd, kh, kw, od, oh, ow),
        strides=(sB, sC, sD, sH, sW, sD * sd, sH * sh, sW * sw),
        writeable=False,
    )
    return view.reshape(B, C * kd * kh * kw, od * oh * ow)


def col2vol(cols, C, dp, hp, wp, kd, kh, kw, sd, sh, sw, od, oh, ow):
    B = cols.shape[0]
    out = np.zeros((B, C, dp, hp, wp), dtype=cols.dtype)
    c8 = cols.reshape(B, C, kd, kh, kw, od, oh, ow)
    for a in range(kd):
        for i in range(kh):
            for j in range(kw):
                out[:, :, a:a + sd * od:sd, i:i + sh * oh:sh, j:j + sw * ow:sw] += c8[:, :, a, i, j]
    return out
