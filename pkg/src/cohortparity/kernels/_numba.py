"""Numba-compiled kernels; see ``_numpy`` for the contract of each function."""

import math

import numpy as np
from numba import njit

PROB_FLOOR = 1e-12


@njit(cache=True)
def sparse_matmul(indptr, indices, data, W):
    n_rows = indptr.shape[0] - 1
    n_cols = W.shape[1]
    out = np.zeros((n_rows, n_cols))
    for r in range(n_rows):
        for p in range(indptr[r], indptr[r + 1]):
            j = indices[p]
            v = data[p]
            for c in range(n_cols):
                out[r, c] += v * W[j, c]
    return out


@njit(cache=True)
def sparse_matmul_t(indptr, indices, data, G, n_features):
    n_rows = indptr.shape[0] - 1
    n_cols = G.shape[1]
    out = np.zeros((n_features, n_cols))
    for r in range(n_rows):
        for p in range(indptr[r], indptr[r + 1]):
            j = indices[p]
            v = data[p]
            for c in range(n_cols):
                out[j, c] += v * G[r, c]
    return out


@njit(cache=True)
def nearest_centroid(X, C):
    n, d = X.shape
    k = C.shape[0]
    labels = np.zeros(n, dtype=np.int64)
    best = np.empty(n)
    for i in range(n):
        bi = 0
        bd = np.inf
        for j in range(k):
            s = 0.0
            for t in range(d):
                diff = X[i, t] - C[j, t]
                s += diff * diff
            if s < bd:
                bd = s
                bi = j
        labels[i] = bi
        best[i] = bd
    return labels, best


@njit(cache=True, inline="always")
def _sigmoid(x):
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    ex = math.exp(x)
    return ex / (1.0 + ex)


@njit(cache=True)
def lstm_pointwise_forward(z, c_prev):
    B, H = c_prev.shape
    gates = np.empty_like(z)
    c = np.empty_like(c_prev)
    h = np.empty_like(c_prev)
    tanh_c = np.empty_like(c_prev)
    for b in range(B):
        for u in range(H):
            i = _sigmoid(z[b, u])
            f = _sigmoid(z[b, H + u])
            g = math.tanh(z[b, 2 * H + u])
            o = _sigmoid(z[b, 3 * H + u])
            gates[b, u] = i
            gates[b, H + u] = f
            gates[b, 2 * H + u] = g
            gates[b, 3 * H + u] = o
            cc = f * c_prev[b, u] + i * g
            tc = math.tanh(cc)
            c[b, u] = cc
            tanh_c[b, u] = tc
            h[b, u] = o * tc
    return gates, c, h, tanh_c


@njit(cache=True)
def lstm_pointwise_backward(gates, c_prev, tanh_c, dh, dc_next):
    B, H = c_prev.shape
    dz = np.empty_like(gates)
    dc_prev = np.empty_like(c_prev)
    for b in range(B):
        for u in range(H):
            i = gates[b, u]
            f = gates[b, H + u]
            g = gates[b, 2 * H + u]
            o = gates[b, 3 * H + u]
            tc = tanh_c[b, u]
            dc = dc_next[b, u] + dh[b, u] * o * (1.0 - tc * tc)
            dz[b, u] = dc * g * i * (1.0 - i)
            dz[b, H + u] = dc * c_prev[b, u] * f * (1.0 - f)
            dz[b, 2 * H + u] = dc * i * (1.0 - g * g)
            dz[b, 3 * H + u] = dh[b, u] * tc * o * (1.0 - o)
            dc_prev[b, u] = dc * f
    return dz, dc_prev


@njit(cache=True)
def softmax_xent(logits, targets):
    n, C = logits.shape
    probs = np.empty_like(logits)
    losses = np.zeros(n)
    for r in range(n):
        m = logits[r, 0]
        for c in range(1, C):
            if logits[r, c] > m:
                m = logits[r, c]
        s = 0.0
        for c in range(C):
            e = math.exp(logits[r, c] - m)
            probs[r, c] = e
            s += e
        for c in range(C):
            probs[r, c] /= s
        t = targets[r]
        if t >= 0:
            losses[r] = -math.log(max(probs[r, t], PROB_FLOOR))
    return probs, losses
