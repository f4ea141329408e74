"""Brute-force reference implementations shared by the tests."""

import itertools

import numpy as np


def conv3d_direct(x, w, b, stride=(1, 1, 1), padding=(0, 0, 0), groups=1):
    """Direct-sum 3D convolution: one output element at a time."""
    B, C, D, H, W = x.shape
    Co, Cg, kd, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0)) + tuple((p, p) for p in padding))
    od = (D + 2 * padding[0] - kd) // stride[0] + 1
    oh = (H + 2 * padding[1] - kh) // stride[1] + 1
    ow = (W + 2 * padding[2] - kw) // stride[2] + 1
    out = np.zeros((B, Co, od, oh, ow))
    co_per = Co // groups
    for n, o, z, y, q in itertools.product(range(B), range(Co), range(od), range(oh), range(ow)):
        g = o // co_per
        acc = 0.0 if b is None else b[o]
        for ci in range(Cg):
            c = g * Cg + ci
            for a, i, j in itertools.product(range(kd), range(kh), range(kw)):
                acc += xp[n, c, z * stride[0] + a, y * stride[1] + i, q * stride[2] + j] * w[o, ci, a, i, j]
        out[n, o, z, y, q] = acc
    return out


def conv_transpose3d_direct(x, w, b, stride, padding, out_dims):
    """Scatter form: every input voxel spreads kernel-weighted copies into the output."""
    B, Ci, D, H, W = x.shape
    _, Co, kd, kh, kw = w.shape
    full = [(n - 1) * s + k for n, s, k in zip((D, H, W), stride, (kd, kh, kw))]
    out = np.zeros((B, Co, *full))
    for n, c, z, y, q in itertools.product(range(B), range(Ci), range(D), range(H), range(W)):
        for o in range(Co):
            out[n, o, z * stride[0]:z * stride[0] + kd, y * stride[1]:y * stride[1] + kh,
                q * stride[2]:q * stride[2] + kw] += x[n, c, z, y, q] * w[c, o]
    pd, ph, pw = padding
    out = out[:, :, pd:pd + out_dims[0], ph:ph + out_dims[1], pw:pw + out_dims[2]]
    return out if b is None else out + b[None, :, None, None, None]


def matmul_loops(a, b):
    n, k = a.shape
    m = b.shape[1]
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def cross_attention_loops(V, text, Wq, bq, Wk, bk, Wv, bv):
    """softmax(Q K^T / sqrt(d)) V_text, one image token and one word at a time."""
    B, M, C = V.shape
    L = text.shape[0]
    K = [text[l] @ Wk + bk for l in range(L)]
    Vt = [text[l] @ Wv + bv for l in range(L)]
    out = np.zeros((B, M, C))
    for n in range(B):
        for m in range(M):
            q = V[n, m] @ Wq + bq
            s = np.array([sum(q[c] * K[l][c] for c in range(C)) / np.sqrt(C) for l in range(L)])
            e = np.exp(s - s.max())
            a = e / e.sum()
            for l in range(L):
                out[n, m] += a[l] * Vt[l]
    return out


def surface_loops(m):
    D, H, W = m.shape
    out = np.zeros(m.shape, bool)
    for z, y, x in zip(*np.nonzero(m)):
        for dz, dy, dx in ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)):
            a, b, c = z + dz, y + dy, x + dx
            if not (0 <= a < D and 0 <= b < H and 0 <= c < W) or not m[a, b, c]:
                out[z, y, x] = True
                break
    return out


def all_pairs_min(src, dst, spacing=(1.0, 1.0, 1.0)):
    """For every voxel of ``src`` (row-major), the Euclidean distance to the nearest ``dst`` voxel."""
    sp = np.asarray(spacing)
    a = np.argwhere(src) * sp
    b = np.argwhere(dst) * sp
    if len(a) == 0:
        return np.zeros(0)
    if len(b) == 0:
        return np.full(len(a), np.inf)
    d = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1))
    return d.min(axis=1)


def dice_oracle(p, g):
    p, g = p.astype(bool).ravel(), g.astype(bool).ravel()
    inter = sum(1 for u, v in zip(p, g) if u and v)
    tot = int(p.sum() + g.sum())
    return 1.0 if tot == 0 else 2 * inter / tot


def nsd_oracle(p, g, tau, spacing=(1.0, 1.0, 1.0)):
    sp, sg = surface_loops(p), surface_loops(g)
    d1, d2 = all_pairs_min(sp, sg, spacing), all_pairs_min(sg, sp, spacing)
    tot = d1.size + d2.size
    return 1.0 if tot == 0 else float(((d1 <= tau).sum() + (d2 <= tau).sum()) / tot)


def hausdorff_oracle(p, g, percentile=100.0, spacing=(1.0, 1.0, 1.0)):
    sp, sg = surface_loops(p), surface_loops(g)
    d1, d2 = all_pairs_min(sp, sg, spacing), all_pairs_min(sg, sp, spacing)
    return float(max(np.percentile(d1, percentile), np.percentile(d2, percentile)))
