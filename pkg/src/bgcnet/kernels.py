"""Hot numeric kernels with two interchangeable backends.

The numba backend compiles the inner loops with ``@njit``; the numpy
backend expresses the same contractions with einsum/BLAS. The backend
is chosen once at import time from the environment variable
``BGCNET_NUMBA`` ("0", "false" or "off" selects the numpy fallback).
Both backends agree to floating-point round-off; see
``benchmarks/bench_kernels.py`` for a speed comparison.
"""

import os

import numpy as np

_FALSY = {"0", "false", "off", "no"}


def numba_requested() -> bool:
    return os.environ.get("BGCNET_NUMBA", "1").strip().lower() not in _FALSY


# ---------------------------------------------------------------------------
# numpy backend
# ---------------------------------------------------------------------------

def pairwise_sq_dists_np(emb):
    """Squared euclidean distance between every pair of embedding rows."""
    sq = np.sum(emb * emb, axis=1)
    z = sq[:, None] + sq[None, :] - 2.0 * (emb @ emb.T)
    np.maximum(z, 0.0, out=z)
    np.fill_diagonal(z, 0.0)
    return 0.5 * (z + z.T)


def time_conv_k2_np(x, w0, w1, b, dilation):
    """Causal dilated convolution with kernel size 2 over the trailing axis.

    x: (B, C, N, T); w0 mixes the tap at t - dilation, w1 the tap at t.
    Returns (B, O, N, T - dilation).
    """
    d = dilation
    y = np.einsum("bcnt,co->bont", x[..., :-d], w0, optimize=True)
    y += np.einsum("bcnt,co->bont", x[..., d:], w1, optimize=True)
    y += b[None, :, None, None]
    return y


def time_conv_k2_backward_np(x, w0, w1, dilation, dy):
    d = dilation
    dw0 = np.einsum("bcnt,bont->co", x[..., :-d], dy, optimize=True)
    dw1 = np.einsum("bcnt,bont->co", x[..., d:], dy, optimize=True)
    db = dy.sum(axis=(0, 2, 3))
    dx = np.zeros_like(x)
    dx[..., :-d] += np.einsum("bont,co->bcnt", dy, w0, optimize=True)
    dx[..., d:] += np.einsum("bont,co->bcnt", dy, w1, optimize=True)
    return dx, dw0, dw1, db


def graph_mix_np(g, x):
    """Apply an N x N graph operator over the node axis of x: (B, C, N, T)."""
    return np.einsum("nm,bcmt->bcnt", g, x, optimize=True)


def graph_mix_grad_np(dy, x):
    """Gradient of graph_mix with respect to the graph operator."""
    return np.einsum("bcnt,bcmt->nm", dy, x, optimize=True)


# ---------------------------------------------------------------------------
# numba backend
# ---------------------------------------------------------------------------

_HAVE_NUMBA = False
if numba_requested():
    try:
        from numba import njit

        _HAVE_NUMBA = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        _HAVE_NUMBA = False

if _HAVE_NUMBA:

    @njit(cache=True)
    def _pairwise_sq_dists_nb(emb):
        n, c = emb.shape
        z = np.zeros((n, n), dtype=np.float64)
        for p in range(n):
            for q in range(p + 1, n):
                acc = 0.0
                for k in range(c):
                    diff = emb[p, k] - emb[q, k]
                    acc += diff * diff
                z[p, q] = acc
                z[q, p] = acc
        return z

    @njit(cache=True)
    def _time_conv_k2_nb(xt, w0t, w1t, b, d):
        # xt: (B, N, C, T) so each (C, T) node slice is contiguous for dot
        bs, n, cin, t = xt.shape
        cout = w0t.shape[0]
        tout = t - d
        y = np.empty((bs, n, cout, tout), dtype=np.float64)
        for bi in range(bs):
            for ni in range(n):
                xs = xt[bi, ni]
                y0 = np.dot(w0t, np.ascontiguousarray(xs[:, :tout]))
                y1 = np.dot(w1t, np.ascontiguousarray(xs[:, d:]))
                for o in range(cout):
                    for ti in range(tout):
                        y[bi, ni, o, ti] = y0[o, ti] + y1[o, ti] + b[o]
        return y

    @njit(cache=True)
    def _time_conv_k2_backward_nb(xt, w0, w1, d, dyt):
        bs, n, cin, t = xt.shape
        cout = w0.shape[1]
        tout = t - d
        dxt = np.zeros_like(xt)
        dw0 = np.zeros_like(w0)
        dw1 = np.zeros_like(w1)
        db = np.zeros(cout, dtype=np.float64)
        for bi in range(bs):
            for ni in range(n):
                dys = dyt[bi, ni]                       # (O, T') contiguous
                xs = xt[bi, ni]
                x0 = np.ascontiguousarray(xs[:, :tout])
                x1 = np.ascontiguousarray(xs[:, d:])
                dw0 += np.dot(x0, dys.T)
                dw1 += np.dot(x1, dys.T)
                for o in range(cout):
                    for ti in range(tout):
                        db[o] += dys[o, ti]
                d0 = np.dot(w0, dys)
                d1 = np.dot(w1, dys)
                for c in range(cin):
                    for ti in range(tout):
                        dxt[bi, ni, c, ti] += d0[c, ti]
                        dxt[bi, ni, c, ti + d] += d1[c, ti]
        return dxt, dw0, dw1, db

    @njit(cache=True)
    def _graph_mix_nb(g, x):
        bs, c, m, t = x.shape
        n = g.shape[0]
        y = np.empty((bs, c, n, t), dtype=np.float64)
        for bi in range(bs):
            for ci in range(c):
                y[bi, ci] = np.dot(g, x[bi, ci])
        return y

    @njit(cache=True)
    def _graph_mix_grad_nb(dy, x):
        bs, c, n, t = dy.shape
        m = x.shape[2]
        dg = np.zeros((n, m), dtype=np.float64)
        for bi in range(bs):
            for ci in range(c):
                dg += np.dot(dy[bi, ci], x[bi, ci].T)
        return dg

    def pairwise_sq_dists_nb(emb):
        return _pairwise_sq_dists_nb(np.ascontiguousarray(emb, dtype=np.float64))

    def time_conv_k2_nb(x, w0, w1, b, dilation):
        xt = np.ascontiguousarray(np.transpose(x, (0, 2, 1, 3)))
        y = _time_conv_k2_nb(xt, np.ascontiguousarray(w0.T),
                             np.ascontiguousarray(w1.T),
                             np.ascontiguousarray(b), dilation)
        return np.ascontiguousarray(np.transpose(y, (0, 2, 1, 3)))

    def time_conv_k2_backward_nb(x, w0, w1, dilation, dy):
        xt = np.ascontiguousarray(np.transpose(x, (0, 2, 1, 3)))
        dyt = np.ascontiguousarray(np.transpose(dy, (0, 2, 1, 3)))
        dxt, dw0, dw1, db = _time_conv_k2_backward_nb(
            xt, np.ascontiguousarray(w0), np.ascontiguousarray(w1),
            dilation, dyt)
        return (np.ascontiguousarray(np.transpose(dxt, (0, 2, 1, 3))),
                dw0, dw1, db)

    def graph_mix_nb(g, x):
        return _graph_mix_nb(np.ascontiguousarray(g), np.ascontiguousarray(x))

    def graph_mix_grad_nb(dy, x):
        return _graph_mix_grad_nb(np.ascontiguousarray(dy), np.ascontiguousarray(x))


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

if _HAVE_NUMBA:
    BACKEND = "numba"
    pairwise_sq_dists = pairwise_sq_dists_nb
    time_conv_k2 = time_conv_k2_nb
    time_conv_k2_backward = time_conv_k2_backward_nb
    graph_mix = graph_mix_nb
    graph_mix_grad = graph_mix_grad_nb
else:
    BACKEND = "numpy"
    pairwise_sq_dists = pairwise_sq_dists_np
    time_conv_k2 = time_conv_k2_np
    time_conv_k2_backward = time_conv_k2_backward_np
    graph_mix = graph_mix_np
    graph_mix_grad = graph_mix_grad_np
