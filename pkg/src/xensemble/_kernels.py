"""
Hot numeric kernels with a numba and a pure-numpy implementation.

The numba path is used when numba imports cleanly and the environment
variable ``XENSEMBLE_DISABLE_NUMBA`` is unset (or ``0``). Both paths are
deterministic and agree to within floating-point summation order, which
the test suite checks at 1e-12.

Layouts are NCHW throughout; convolution is 'same'-padded, stride 1.
"""

from __future__ import annotations

import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dep in practice
    numba = None
    HAVE_NUMBA = False


def _flag_disabled() -> bool:
    return os.environ.get("XENSEMBLE_DISABLE_NUMBA", "0").lower() not in ("", "0", "false", "no")


USE_NUMBA = HAVE_NUMBA and not _flag_disabled()


# ---------------------------------------------------------------------------
# numpy reference path
# ---------------------------------------------------------------------------

def _im2col(x, k, pad):
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))  # N,C,H,W,k,k
    n, c, h, w = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n, h, w, c * k * k)
    return cols


def numpy_conv2d_forward(x, w, b):
    o, c, k, _ = w.shape
    cols = _im2col(x, k, k // 2)
    out = cols @ w.reshape(o, -1).T + b  # N,H,W,O
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def numpy_conv2d_backward(x, w, dout):
    o, c, k, _ = w.shape
    pad = k // 2
    n, _, h, wd = x.shape
    cols = _im2col(x, k, pad)
    d = dout.transpose(0, 2, 3, 1).reshape(-1, o)
    dw = (d.T @ cols.reshape(-1, c * k * k)).reshape(w.shape)
    db = dout.sum(axis=(0, 2, 3))
    dcols = (d @ w.reshape(o, -1)).reshape(n, h, wd, c, k, k)
    dxp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad))
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + h, j:j + wd] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    dx = dxp[:, :, pad:pad + h, pad:pad + wd]
    return np.ascontiguousarray(dx), dw, db


def numpy_maxpool2_forward(x):
    n, c, h, w = x.shape
    ho, wo = h // 2, w // 2
    win = x[:, :, :2 * ho, :2 * wo].reshape(n, c, ho, 2, wo, 2)
    win = win.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, 4)
    arg = win.argmax(axis=-1)  # first max in row-major window order
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(out), arg.astype(np.int64)


def numpy_maxpool2_backward(dout, arg, in_shape):
    n, c, h, w = in_shape
    ho, wo = dout.shape[2], dout.shape[3]
    dwin = np.zeros((n, c, ho, wo, 4))
    np.put_along_axis(dwin, arg[..., None], dout[..., None], axis=-1)
    dwin = dwin.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * ho, 2 * wo)
    dx = np.zeros(in_shape)
    dx[:, :, :2 * ho, :2 * wo] = dwin
    return dx


def numpy_shapley_from_values(values, weights):
    """phi_i = sum over masks without i of weights[|S|] * (v(S | i) - v(S))."""
    n = weights.shape[0]
    masks = np.arange(values.shape[0], dtype=np.int64)
    sizes = np.zeros(masks.shape[0], dtype=np.int64)
    for i in range(n):
        sizes += (masks >> i) & 1
    phi = np.empty(n)
    for i in range(n):
        without = masks[((masks >> i) & 1) == 0]
        terms = weights[sizes[without]] * (values[without | (1 << i)] - values[without])
        phi[i] = np.sum(terms)
    return phi


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------

if HAVE_NUMBA:

    @numba.njit(cache=True)
    def _pad(x, pad):
        n, c, h, wd = x.shape
        xp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad))
        for s in range(n):
            for ic in range(c):
                for r in range(h):
                    for q in range(wd):
                        xp[s, ic, r + pad, q + pad] = x[s, ic, r, q]
        return xp

    @numba.njit(cache=True)
    def numba_conv2d_forward(x, w, b):
        n, c, h, wd = x.shape
        o, _, k, _ = w.shape
        xp = _pad(x, k // 2)
        out = np.empty((n, o, h, wd))
        for s in range(n):
            for oc in range(o):
                acc = out[s, oc]
                acc[:, :] = b[oc]
                for ic in range(c):
                    src = xp[s, ic]
                    for i in range(k):
                        for j in range(k):
                            wij = w[oc, ic, i, j]
                            for r in range(h):
                                row = src[r + i]
                                for q in range(wd):
                                    acc[r, q] += wij * row[q + j]
        return out

    @numba.njit(cache=True)
    def numba_conv2d_backward(x, w, dout):
        n, c, h, wd = x.shape
        o, _, k, _ = w.shape
        pad = k // 2
        xp = _pad(x, pad)
        dxp = np.zeros(xp.shape)
        dw = np.zeros((o, c, k, k))
        db = np.zeros(o)
        for s in range(n):
            for oc in range(o):
                g = dout[s, oc]
                db[oc] += g.sum()
                for ic in range(c):
                    src = xp[s, ic]
                    dst = dxp[s, ic]
                    for i in range(k):
                        for j in range(k):
                            wij = w[oc, ic, i, j]
                            acc = 0.0
                            for r in range(h):
                                row = src[r + i]
                                drow = dst[r + i]
                                grow = g[r]
                                for q in range(wd):
                                    acc += grow[q] * row[q + j]
                                    drow[q + j] += wij * grow[q]
                            dw[oc, ic, i, j] += acc
        dx = np.ascontiguousarray(dxp[:, :, pad:pad + h, pad:pad + wd])
        return dx, dw, db

    @numba.njit(cache=True)
    def numba_maxpool2_forward(x):
        n, c, h, w = x.shape
        ho = h // 2
        wo = w // 2
        out = np.empty((n, c, ho, wo))
        arg = np.empty((n, c, ho, wo), dtype=np.int64)
        for s in range(n):
            for ch in range(c):
                for r in range(ho):
                    for q in range(wo):
                        best = x[s, ch, 2 * r, 2 * q]
                        bi = 0
                        for t in range(1, 4):
                            v = x[s, ch, 2 * r + t // 2, 2 * q + t % 2]
                            if v > best:
                                best = v
                                bi = t
                        out[s, ch, r, q] = best
                        arg[s, ch, r, q] = bi
        return out, arg

    @numba.njit(cache=True)
    def _numba_maxpool2_backward(dout, arg, dx):
        n, c, ho, wo = dout.shape
        for s in range(n):
            for ch in range(c):
                for r in range(ho):
                    for q in range(wo):
                        t = arg[s, ch, r, q]
                        dx[s, ch, 2 * r + t // 2, 2 * q + t % 2] += dout[s, ch, r, q]
        return dx

    def numba_maxpool2_backward(dout, arg, in_shape):
        return _numba_maxpool2_backward(dout, arg, np.zeros(in_shape))

    @numba.njit(cache=True)
    def numba_shapley_from_values(values, weights):
        n = weights.shape[0]
        m = values.shape[0]
        phi = np.zeros(n)
        for i in range(n):
            bit = 1 << i
            acc = 0.0
            for mask in range(m):
                if mask & bit:
                    continue
                size = 0
                t = mask
                while t:
                    size += t & 1
                    t >>= 1
                acc += weights[size] * (values[mask | bit] - values[mask])
            phi[i] = acc
        return phi

else:  # pragma: no cover
    numba_conv2d_forward = numpy_conv2d_forward
    numba_conv2d_backward = numpy_conv2d_backward
    numba_maxpool2_forward = numpy_maxpool2_forward
    numba_maxpool2_backward = numpy_maxpool2_backward
    numba_shapley_from_values = numpy_shapley_from_values


def _pick(nb, npy):
    return nb if USE_NUMBA else npy


def conv2d_forward(x, w, b):
    return _pick(numba_conv2d_forward, numpy_conv2d_forward)(
        np.ascontiguousarray(x, dtype=np.float64), np.ascontiguousarray(w), np.ascontiguousarray(b)
    )


def conv2d_backward(x, w, dout):
    return _pick(numba_conv2d_backward, numpy_conv2d_backward)(
        np.ascontiguousarray(x), np.ascontiguousarray(w), np.ascontiguousarray(dout)
    )


def maxpool2_forward(x):
    return _pick(numba_maxpool2_forward, numpy_maxpool2_forward)(np.ascontiguousarray(x))


def maxpool2_backward(dout, arg, in_shape):
    return _pick(numba_maxpool2_backward, numpy_maxpool2_backward)(
        np.ascontiguousarray(dout), np.ascontiguousarray(arg), tuple(in_shape)
    )


def shapley_from_values(values, weights):
    return _pick(numba_shapley_from_values, numpy_shapley_from_values)(
        np.ascontiguousarray(values, dtype=np.float64), np.ascontiguousarray(weights, dtype=np.float64)
    )


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
