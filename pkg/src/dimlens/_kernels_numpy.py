"""Pure-numpy kernel implementations (fallback backend).

Convolutions use stride-tricks windows + einsum; the sampling kernels emulate
the same splitmix64 per-element substreams as the numba backend, advancing a
vector of uint64 states so that every pixel consumes exactly the same number
of draws as the scalar loops do.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_U53 = float(2.0 ** -53)


def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _stream_init(call_seed, n):
    idx = np.arange(1, n + 1, dtype=np.uint64)
    return _mix(np.uint64(call_seed) + idx * GOLDEN)


def _next_uniform(state):
    # advances `state` in place; returns doubles in [0, 1)
    state += GOLDEN
    return (_mix(state) >> np.uint64(11)).astype(np.float64) * _U53


def rng_uniform(call_seed, n):
    state = _stream_init(call_seed, n)
    return _next_uniform(state)


def rng_normal(call_seed, n):
    # one Box-Muller variate per element: 2 uniforms consumed per pixel
    state = _stream_init(call_seed, n)
    u1 = _next_uniform(state)
    u2 = _next_uniform(state)
    return np.sqrt(-2.0 * np.log1p(-u1)) * np.cos(2.0 * np.pi * u2)


def rng_poisson(call_seed, lam, crossover):
    """Knuth multiplication below `crossover`, rounded N(lam, lam) above."""
    lam = np.asarray(lam, dtype=np.float64).ravel()
    n = lam.size
    state = _stream_init(call_seed, n)
    out = np.zeros(n, dtype=np.int64)

    small = np.flatnonzero(lam < crossover)
    if small.size:
        st = state[small].copy()
        limit = np.exp(-lam[small])
        prod = np.ones(small.size)
        count = np.zeros(small.size, dtype=np.int64)
        alive = np.arange(small.size)
        while alive.size:
            st[alive] += GOLDEN
            u = (_mix(st[alive]) >> np.uint64(11)).astype(np.float64) * _U53
            prod[alive] *= u
            count[alive] += 1
            alive = alive[prod[alive] > limit[alive]]
        out[small] = count - 1

    big = np.flatnonzero(lam >= crossover)
    if big.size:
        st = state[big].copy()
        u1 = _next_uniform(st)
        u2 = _next_uniform(st)
        z = np.sqrt(-2.0 * np.log1p(-u1)) * np.cos(2.0 * np.pi * u2)
        val = np.floor(lam[big] + np.sqrt(lam[big]) * z + 0.5)
        out[big] = np.maximum(val, 0.0).astype(np.int64)
    return out


def conv2d_forward(x, k, stride, pad):
    _, _, kh, kw = k.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    return np.einsum("nchwuv,fcuv->nfhw", win, k, optimize=True)


def conv2d_backward(x, k, stride, pad, gout):
    n, c, h, w = x.shape
    f, _, kh, kw = k.shape
    ho, wo = gout.shape[2], gout.shape[3]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    gk = np.einsum("nfhw,nchwuv->fcuv", gout, win, optimize=True)
    gxp = np.zeros_like(xp)
    for u in range(kh):
        for v in range(kw):
            gxp[:, :, u:u + ho * stride:stride, v:v + wo * stride:stride] += \
                np.einsum("nfhw,fc->nchw", gout, k[:, :, u, v], optimize=True)
    gx = gxp[:, :, pad:pad + h, pad:pad + w]
    return gx, gk


def depthwise_forward(x, k, stride, pad):
    c, kh, kw = k.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    return np.einsum("nchwuv,cuv->nchw", win, k, optimize=True)


def depthwise_backward(x, k, stride, pad, gout):
    n, c, h, w = x.shape
    _, kh, kw = k.shape
    ho, wo = gout.shape[2], gout.shape[3]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    gk = np.einsum("nchw,nchwuv->cuv", gout, win, optimize=True)
    gxp = np.zeros_like(xp)
    for u in range(kh):
        for v in range(kw):
            gxp[:, :, u:u + ho * stride:stride, v:v + wo * stride:stride] += \
                gout * k[:, u, v][None, :, None, None]
    gx = gxp[:, :, pad:pad + h, pad:pad + w]
    return gx, gk
