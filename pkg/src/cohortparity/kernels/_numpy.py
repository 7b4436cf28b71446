"""Pure-numpy reference kernels.

Every function here has a twin of the same name in ``_numba`` with identical
signature and semantics. Array arguments are expected as contiguous float64
(int64 for index arrays); callers in the package guarantee this.
"""

import numpy as np

PROB_FLOOR = 1e-12


def sparse_matmul(indptr, indices, data, W):
    """Dense product ``X @ W`` for a CSR matrix ``X``."""
    n_rows = indptr.shape[0] - 1
    out = np.zeros((n_rows, W.shape[1]))
    if indices.shape[0] == 0:
        return out
    rows = np.repeat(np.arange(n_rows), np.diff(indptr))
    np.add.at(out, rows, data[:, None] * W[indices])
    return out


def sparse_matmul_t(indptr, indices, data, G, n_features):
    """Dense product ``X.T @ G`` for a CSR matrix ``X`` with ``n_features`` columns."""
    out = np.zeros((n_features, G.shape[1]))
    if indices.shape[0] == 0:
        return out
    rows = np.repeat(np.arange(indptr.shape[0] - 1), np.diff(indptr))
    np.add.at(out, indices, data[:, None] * G[rows])
    return out


def nearest_centroid(X, C):
    """Index of the nearest row of ``C`` for every row of ``X`` and its squared distance.

    Ties resolve to the lowest centroid index.
    """
    diff = X[:, None, :] - C[None, :, :]
    d2 = np.einsum("nkd,nkd->nk", diff, diff)
    labels = np.argmin(d2, axis=1)
    return labels.astype(np.int64), d2[np.arange(X.shape[0]), labels]


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def lstm_pointwise_forward(z, c_prev):
    """Gate nonlinearities and state update of one LSTM step.

    ``z`` holds the pre-activations of the four gates laid out as
    ``[input | forget | candidate | output]``, each ``H`` wide.
    Returns ``(gates, c, h, tanh_c)`` where ``gates`` are the activated gates.
    """
    H = c_prev.shape[1]
    gates = np.empty_like(z)
    gates[:, : 2 * H] = _sigmoid(z[:, : 2 * H])
    gates[:, 2 * H : 3 * H] = np.tanh(z[:, 2 * H : 3 * H])
    gates[:, 3 * H :] = _sigmoid(z[:, 3 * H :])
    i = gates[:, :H]
    f = gates[:, H : 2 * H]
    g = gates[:, 2 * H : 3 * H]
    o = gates[:, 3 * H :]
    c = f * c_prev + i * g
    tanh_c = np.tanh(c)
    h = o * tanh_c
    return gates, c, h, tanh_c


def lstm_pointwise_backward(gates, c_prev, tanh_c, dh, dc_next):
    """Backward of :func:`lstm_pointwise_forward`.

    ``dc_next`` is the gradient reaching ``c`` from the following step.
    Returns ``(dz, dc_prev)``.
    """
    H = c_prev.shape[1]
    i = gates[:, :H]
    f = gates[:, H : 2 * H]
    g = gates[:, 2 * H : 3 * H]
    o = gates[:, 3 * H :]
    dc = dc_next + dh * o * (1.0 - tanh_c * tanh_c)
    dz = np.empty_like(gates)
    dz[:, :H] = dc * g * i * (1.0 - i)
    dz[:, H : 2 * H] = dc * c_prev * f * (1.0 - f)
    dz[:, 2 * H : 3 * H] = dc * i * (1.0 - g * g)
    dz[:, 3 * H :] = dh * tanh_c * o * (1.0 - o)
    return dz, dc * f


def softmax_xent(logits, targets):
    """Row-wise softmax and cross-entropy against integer ``targets``.

    Rows whose target is negative are masked: their loss is zero.
    Probabilities are floored at ``PROB_FLOOR`` inside the log only.
    """
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    probs = e / e.sum(axis=1, keepdims=True)
    losses = np.zeros(logits.shape[0])
    live = targets >= 0
    rows = np.nonzero(live)[0]
    losses[rows] = -np.log(np.maximum(probs[rows, targets[rows]], PROB_FLOOR))
    return probs, losses
