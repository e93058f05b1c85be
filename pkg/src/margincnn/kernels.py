"""Compiled inner loops for convolution and max-pooling.

All kernels are strict-IEEE numba jits (no fastmath): every output element
is accumulated by exactly one loop body in a fixed order, so results are
bit-identical to the equivalent pure-Python loops and independent of the
worker thread count.

Convolution accumulates each output element in the order: bias, then
kernel row, kernel column, input channel (channel innermost), one
multiply-then-add per term.
"""

from __future__ import annotations

import numpy as np
from numba import config, njit, prange

# The portable threading layer; avoids probing TBB/OpenMP at import time.
config.THREADING_LAYER = "workqueue"


@njit(cache=True, parallel=True)
def conv2d_fwd(xp, k, bias, out, stride):
    # xp: padded input [n, hp, wp, cin]; k: [kh, kw, cin, cout]; out: [n, oh, ow, cout]
    n, _, _, cin = xp.shape
    kh, kw, _, cout = k.shape
    _, oh, ow, _ = out.shape
    for b in prange(n):
        acc = np.empty(cout, dtype=np.float64)
        for i in range(oh):
            for j in range(ow):
                for o in range(cout):
                    acc[o] = bias[o]
                for di in range(kh):
                    for dj in range(kw):
                        for ci in range(cin):
                            x = xp[b, i * stride + di, j * stride + dj, ci]
                            kv = k[di, dj, ci]
                            for o in range(cout):
                                acc[o] = acc[o] + x * kv[o]
                for o in range(cout):
                    out[b, i, j, o] = acc[o]


@njit(cache=True, parallel=True)
def conv2d_bwd_input(gout, kt, dxp, stride):
    # gout: [n, oh, ow, cout]; kt: transposed kernels [kh, kw, cout, cin]; dxp: zeroed [n, hp, wp, cin]
    n, oh, ow, cout = gout.shape
    kh, kw, _, cin = kt.shape
    for b in prange(n):
        for i in range(oh):
            for j in range(ow):
                for di in range(kh):
                    for dj in range(kw):
                        row = dxp[b, i * stride + di, j * stride + dj]
                        for o in range(cout):
                            g = gout[b, i, j, o]
                            kv = kt[di, dj, o]
                            for ci in range(cin):
                                row[ci] = row[ci] + g * kv[ci]


@njit(cache=True, parallel=True)
def conv2d_bwd_kernels(xp, gout, dk, stride):
    # dk: zeroed [kh, kw, cin, cout]; each di-slice is owned by one worker
    n, oh, ow, cout = gout.shape
    kh, kw, cin, _ = dk.shape
    for di in prange(kh):
        for b in range(n):
            for i in range(oh):
                for j in range(ow):
                    gv = gout[b, i, j]
                    for dj in range(kw):
                        for ci in range(cin):
                            x = xp[b, i * stride + di, j * stride + dj, ci]
                            acc = dk[di, dj, ci]
                            for o in range(cout):
                                acc[o] = acc[o] + x * gv[o]


@njit(cache=True, parallel=True)
def maxpool_fwd(x, pool, stride, out, argy, argx):
    # out/argy/argx: [n, oh, ow, c]; argmax is the first maximum in row-major window scan
    n, h, w, c = x.shape
    _, oh, ow, _ = out.shape
    for b in prange(n):
        for i in range(oh):
            for j in range(ow):
                for ch in range(c):
                    iy = i * stride
                    ix = j * stride
                    best = x[b, iy, ix, ch]
                    by = iy
                    bx = ix
                    for dy in range(pool):
                        for dx in range(pool):
                            v = x[b, iy + dy, ix + dx, ch]
                            if v > best:
                                best = v
                                by = iy + dy
                                bx = ix + dx
                    out[b, i, j, ch] = best
                    argy[b, i, j, ch] = by
                    argx[b, i, j, ch] = bx


@njit(cache=True, parallel=True)
def maxpool_bwd(gout, argy, argx, dx):
    # dx: zeroed [n, h, w, c]; overlapping windows accumulate additively
    n, oh, ow, c = gout.shape
    for b in prange(n):
        for i in range(oh):
            for j in range(ow):
                for ch in range(c):
                    dx[b, argy[b, i, j, ch], argx[b, i, j, ch], ch] += gout[b, i, j, ch]
