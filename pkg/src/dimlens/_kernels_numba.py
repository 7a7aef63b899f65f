"""Numba @njit kernel implementations (default backend).

Scalar-loop twins of `_kernels_numpy`: identical uint64 substream arithmetic,
identical draw counts per pixel, so both backends produce the same samples
for the same call seed.
"""

import math

import numpy as np
from numba import njit

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_U53 = 2.0 ** -53


@njit(cache=True, inline="always")
def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@njit(cache=True, inline="always")
def _init_state(call_seed, i):
    return _mix(call_seed + np.uint64(i + 1) * GOLDEN)


@njit(cache=True)
def rng_uniform(call_seed, n):
    out = np.empty(n, dtype=np.float64)
    seed = np.uint64(call_seed)
    for i in range(n):
        st = _init_state(seed, i) + GOLDEN
        out[i] = float(_mix(st) >> np.uint64(11)) * _U53
    return out


@njit(cache=True)
def rng_normal(call_seed, n):
    out = np.empty(n, dtype=np.float64)
    seed = np.uint64(call_seed)
    for i in range(n):
        st = _init_state(seed, i) + GOLDEN
        u1 = float(_mix(st) >> np.uint64(11)) * _U53
        st = st + GOLDEN
        u2 = float(_mix(st) >> np.uint64(11)) * _U53
        out[i] = math.sqrt(-2.0 * math.log1p(-u1)) * math.cos(2.0 * math.pi * u2)
    return out


@njit(cache=True)
def rng_poisson(call_seed, lam, crossover):
    n = lam.size
    out = np.zeros(n, dtype=np.int64)
    seed = np.uint64(call_seed)
    for i in range(n):
        st = _init_state(seed, i)
        lm = lam[i]
        if lm < crossover:
            limit = math.exp(-lm)
            prod = 1.0
            count = 0
            while True:
                st = st + GOLDEN
                prod *= float(_mix(st) >> np.uint64(11)) * _U53
                count += 1
                if prod <= limit:
                    break
            out[i] = count - 1
        else:
            st = st + GOLDEN
            u1 = float(_mix(st) >> np.uint64(11)) * _U53
            st = st + GOLDEN
            u2 = float(_mix(st) >> np.uint64(11)) * _U53
            z = math.sqrt(-2.0 * math.log1p(-u1)) * math.cos(2.0 * math.pi * u2)
            val = math.floor(lm + math.sqrt(lm) * z + 0.5)
            if val < 0.0:
                val = 0.0
            out[i] = np.int64(val)
    return out


@njit(cache=True)
def conv2d_forward(x, k, stride, pad):
    n, c, h, w = x.shape
    f, _, kh, kw = k.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    out = np.zeros((n, f, ho, wo))
    for b in range(n):
        for j in range(f):
            for oh in range(ho):
                for ow in range(wo):
                    acc = 0.0
                    for ch in range(c):
                        for u in range(kh):
                            ih = oh * stride + u - pad
                            if ih < 0 or ih >= h:
                                continue
                            for v in range(kw):
                                iw = ow * stride + v - pad
                                if 0 <= iw < w:
                                    acc += x[b, ch, ih, iw] * k[j, ch, u, v]
                    out[b, j, oh, ow] = acc
    return out


@njit(cache=True)
def conv2d_backward(x, k, stride, pad, gout):
    n, c, h, w = x.shape
    f, _, kh, kw = k.shape
    ho, wo = gout.shape[2], gout.shape[3]
    gx = np.zeros_like(x)
    gk = np.zeros_like(k)
    for b in range(n):
        for j in range(f):
            for oh in range(ho):
                for ow in range(wo):
                    g = gout[b, j, oh, ow]
                    if g == 0.0:
                        continue
                    for ch in range(c):
                        for u in range(kh):
                            ih = oh * stride + u - pad
                            if ih < 0 or ih >= h:
                                continue
                            for v in range(kw):
                                iw = ow * stride + v - pad
                                if 0 <= iw < w:
                                    gx[b, ch, ih, iw] += g * k[j, ch, u, v]
                                    gk[j, ch, u, v] += g * x[b, ch, ih, iw]
    return gx, gk


@njit(cache=True)
def depthwise_forward(x, k, stride, pad):
    n, c, h, w = x.shape
    _, kh, kw = k.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    out = np.zeros((n, c, ho, wo))
    for b in range(n):
        for ch in range(c):
            for oh in range(ho):
                for ow in range(wo):
                    acc = 0.0
                    for u in range(kh):
                        ih = oh * stride + u - pad
                        if ih < 0 or ih >= h:
                            continue
                        for v in range(kw):
                            iw = ow * stride + v - pad
                            if 0 <= iw < w:
                                acc += x[b, ch, ih, iw] * k[ch, u, v]
                    out[b, ch, oh, ow] = acc
    return out


@njit(cache=True)
def depthwise_backward(x, k, stride, pad, gout):
    n, c, h, w = x.shape
    _, kh, kw = k.shape
    ho, wo = gout.shape[2], gout.shape[3]
    gx = np.zeros_like(x)
    gk = np.zeros_like(k)
    for b in range(n):
        for ch in range(c):
            for oh in range(ho):
                for ow in range(wo):
                    g = gout[b, ch, oh, ow]
                    if g == 0.0:
                        continue
                    for u in range(kh):
                        ih = oh * stride + u - pad
                        if ih < 0 or ih >= h:
                            continue
                        for v in range(kw):
                            iw = ow * stride + v - pad
                            if 0 <= iw < w:
                                gx[b, ch, ih, iw] += g * k[ch, u, v]
                                gk[ch, u, v] += g * x[b, ch, ih, iw]
    return gx, gk
