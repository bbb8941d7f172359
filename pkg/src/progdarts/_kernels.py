"""Compiled loops for depthwise convolution (the search's hot path)."""

import numpy as np
from numba import njit


@njit(cache=True)
def depthwise_forward(xp, k, stride, dil, ho, wo):
    n, c = xp.shape[0], xp.shape[1]
    kh, kw = k.shape[1], k.shape[2]
    out = np.zeros((n, c, ho, wo), dtype=xp.dtype)
    for a in range(n):
        for ch in range(c):
            for i in range(kh):
                for j in range(kw):
                    kv = k[ch, i, j]
                    for y in range(ho):
                        for x in range(wo):
                            out[a, ch, y, x] += kv * xp[a, ch, y * stride + i * dil, x * stride + j * dil]
    return out


@njit(cache=True)
def depthwise_backward(xp, k, g, stride, dil, want_x, want_w):
    n, c, ho, wo = g.shape
    kh, kw = k.shape[1], k.shape[2]
    gxp = np.zeros(xp.shape if want_x else (0, 0, 0, 0), dtype=xp.dtype)
    gk = np.zeros(k.shape if want_w else (0, 0, 0), dtype=xp.dtype)
    for a in range(n):
        for ch in range(c):
            for i in range(kh):
                for j in range(kw):
                    kv = k[ch, i, j]
                    acc = 0.0
                    for y in range(ho):
                        for x in range(wo):
                            r = y * stride + i * dil
                            s = x * stride + j * dil
                            gv = g[a, ch, y, x]
                            if want_x:
                                gxp[a, ch, r, s] += kv * gv
                            if want_w:
                                acc += gv * xp[a, ch, r, s]
                    if want_w:
                        gk[ch, i, j] += acc
    return gxp, gk
