"""Jitted inner loops for the convolution-family kernels.

Every kernel reduces each output element in one fixed, documented order so
results are bit-identical across runs and across thread counts.  Parallelism
(``prange``) is only ever placed across independent output elements; no
reduction is split between threads.

Canonical reduction orders (ascending):
  conv forward        per out[n,co,oh,ow]:  bias, then (ci, ky, kx)
  conv grad wrt x     per dx[n,ci,iy,ix]:   (co, ky, kx, oh, ow)
  conv grad wrt w     per dw[co,ci,ky,kx]:  (n, oh, ow)
  deconv forward      per out element:      bias, then ci
  deconv grad wrt x   per dx element:       (co, ky, kx)
  deconv grad wrt w   per dw element:       (n, ih, iw)

Inputs arrive pre-padded (``xp``); gradients are produced in padded
coordinates and cropped by the caller.  All arrays are C-contiguous float64.
"""

import numpy as np
from numba import config, njit, prange

# omp is reentrancy-safe for concurrent calls from worker threads; results
# do not depend on the thread count (parallelism is across output elements)
config.THREADING_LAYER = "omp"


@njit(cache=True, parallel=True)
def conv2d_fwd(xp, w, bias, stride, dil, out):
    n, cout, hout, wout = out.shape
    cin = w.shape[1]
    kh = w.shape[2]
    kw = w.shape[3]
    for idx in prange(n * cout):
        b = idx // cout
        co = idx - b * cout
        acc = np.empty(wout)
        for oh in range(hout):
            for ow in range(wout):
                acc[ow] = bias[co]
            if stride == 1 and kw == 3:
                # fast path for the ubiquitous 3-wide kernels
                for ci in range(cin):
                    for ky in range(kh):
                        xrow = xp[b, ci, oh + ky * dil]
                        w0 = w[co, ci, ky, 0]
                        w1 = w[co, ci, ky, 1]
                        w2 = w[co, ci, ky, 2]
                        d2 = 2 * dil
                        for ow in range(wout):
                            s = acc[ow]
                            s += xrow[ow] * w0
                            s += xrow[ow + dil] * w1
                            s += xrow[ow + d2] * w2
                            acc[ow] = s
            else:
                for ci in range(cin):
                    for ky in range(kh):
                        xrow = xp[b, ci, oh * stride + ky * dil]
                        for kx in range(kw):
                            wv = w[co, ci, ky, kx]
                            x0 = kx * dil
                            for ow in range(wout):
                                acc[ow] += xrow[x0 + ow * stride] * wv
            for ow in range(wout):
                out[b, co, oh, ow] = acc[ow]


@njit(cache=True, parallel=True)
def conv2d_dx(dy, w, stride, dil, dxp):
    n, cout, hout, wout = dy.shape
    cin = w.shape[1]
    kh = w.shape[2]
    kw = w.shape[3]
    for idx in prange(n * cin):
        b = idx // cin
        ci = idx - b * cin
        for co in range(cout):
            for ky in range(kh):
                for kx in range(kw):
                    wv = w[co, ci, ky, kx]
                    x0 = kx * dil
                    for oh in range(hout):
                        dxrow = dxp[b, ci, oh * stride + ky * dil]
                        dyrow = dy[b, co, oh]
                        for ow in range(wout):
                            dxrow[x0 + ow * stride] += dyrow[ow] * wv


@njit(cache=True, parallel=True)
def conv2d_dx_s1(dyp, w, pad, dil, dx):
    # stride-1 gather form: dyp is dy padded by m = (kh-1)*dil each side, so
    # dx[b,ci,iy,ix] = sum over (co,ky,kx) of dyp[.., iy+pad-ky*dil+m, ..]*w
    n, cin, h, ww = dx.shape
    cout = w.shape[0]
    kh = w.shape[2]
    kw = w.shape[3]
    m = (kh - 1) * dil
    for idx in prange(n * cin):
        b = idx // cin
        ci = idx - b * cin
        acc = np.empty(ww)
        for iy in range(h):
            for ix in range(ww):
                acc[ix] = 0.0
            if kw == 3:
                mm = (kw - 1) * dil
                for co in range(cout):
                    for ky in range(kh):
                        dyrow = dyp[b, co, iy + pad - ky * dil + m]
                        w0 = w[co, ci, ky, 0]
                        w1 = w[co, ci, ky, 1]
                        w2 = w[co, ci, ky, 2]
                        x0 = pad + mm
                        x1 = pad - dil + mm
                        x2 = pad - 2 * dil + mm
                        for ix in range(ww):
                            s = acc[ix]
                            s += dyrow[x0 + ix] * w0
                            s += dyrow[x1 + ix] * w1
                            s += dyrow[x2 + ix] * w2
                            acc[ix] = s
            else:
                mm = (kw - 1) * dil
                for co in range(cout):
                    for ky in range(kh):
                        dyrow = dyp[b, co, iy + pad - ky * dil + m]
                        for kx in range(kw):
                            wv = w[co, ci, ky, kx]
                            x0 = pad - kx * dil + mm
                            for ix in range(ww):
                                acc[ix] += dyrow[x0 + ix] * wv
            for ix in range(ww):
                dx[b, ci, iy, ix] = acc[ix]


@njit(cache=True, parallel=True)
def conv2d_dw(xp, dy, stride, dil, dw):
    cout, cin, kh, kw = dw.shape
    n = dy.shape[0]
    hout = dy.shape[2]
    wout = dy.shape[3]
    for co in prange(cout):
        for ci in range(cin):
            for ky in range(kh):
                if kw == 3:
                    a0 = 0.0
                    a1 = 0.0
                    a2 = 0.0
                    d2 = 2 * dil
                    for b in range(n):
                        for oh in range(hout):
                            xrow = xp[b, ci, oh * stride + ky * dil]
                            dyrow = dy[b, co, oh]
                            for ow in range(wout):
                                v = dyrow[ow]
                                x0 = ow * stride
                                a0 += xrow[x0] * v
                                a1 += xrow[x0 + dil] * v
                                a2 += xrow[x0 + d2] * v
                    dw[co, ci, ky, 0] = a0
                    dw[co, ci, ky, 1] = a1
                    dw[co, ci, ky, 2] = a2
                else:
                    for kx in range(kw):
                        a = 0.0
                        x0 = kx * dil
                        for b in range(n):
                            for oh in range(hout):
                                xrow = xp[b, ci, oh * stride + ky * dil]
                                dyrow = dy[b, co, oh]
                                for ow in range(wout):
                                    a += xrow[x0 + ow * stride] * dyrow[ow]
                        dw[co, ci, ky, kx] = a


@njit(cache=True, parallel=True)
def deconv2d_fwd(x, w, bias, out):
    # kernel 2x2, stride 2: every input pixel owns a disjoint 2x2 output block
    n, cin, h, ww = x.shape
    cout = w.shape[0]
    for idx in prange(n * cout):
        b = idx // cout
        co = idx - b * cout
        acc = np.empty(ww)
        for i in range(h):
            for ky in range(2):
                for kx in range(2):
                    for j in range(ww):
                        acc[j] = bias[co]
                    for ci in range(cin):
                        wv = w[co, ci, ky, kx]
                        xrow = x[b, ci, i]
                        for j in range(ww):
                            acc[j] += xrow[j] * wv
                    orow = out[b, co, 2 * i + ky]
                    for j in range(ww):
                        orow[2 * j + kx] = acc[j]


@njit(cache=True, parallel=True)
def deconv2d_dx(dy, w, dx):
    n, cin, h, ww = dx.shape
    cout = w.shape[0]
    for idx in prange(n * cin):
        b = idx // cin
        ci = idx - b * cin
        for co in range(cout):
            for ky in range(2):
                for kx in range(2):
                    wv = w[co, ci, ky, kx]
                    for i in range(h):
                        dyrow = dy[b, co, 2 * i + ky]
                        dxrow = dx[b, ci, i]
                        for j in range(ww):
                            dxrow[j] += dyrow[2 * j + kx] * wv


@njit(cache=True, parallel=True)
def deconv2d_dw(x, dy, dw):
    cout = dw.shape[0]
    cin = dw.shape[1]
    n, _, h, ww = x.shape
    for co in prange(cout):
        for ci in range(cin):
            for ky in range(2):
                a0 = 0.0
                a1 = 0.0
                for b in range(n):
                    for i in range(h):
                        xrow = x[b, ci, i]
                        dyrow = dy[b, co, 2 * i + ky]
                        for j in range(ww):
                            v = xrow[j]
                            a0 += v * dyrow[2 * j]
                            a1 += v * dyrow[2 * j + 1]
                dw[co, ci, ky, 0] = a0
                dw[co, ci, ky, 1] = a1
