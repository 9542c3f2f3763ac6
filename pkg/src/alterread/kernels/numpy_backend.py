"""Pure-numpy reference implementations of the hot numeric kernels.

This is the fallback path selected with ``ALTERREAD_BACKEND=numpy``; the
numba backend must match these formulas exactly (same max-subtraction,
same update order), so the two paths agree to rounding.
"""

import numpy as np

NAME = "numpy"


def all_finite(a):
    return bool(np.isfinite(a).all())


def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_grad(y, g):
    return g * y * (1.0 - y)


def tanh_grad(y, g):
    return g * (1.0 - y * y)


def masked_softmax(logits, mask):
    """Row-wise exp-normalization over the True positions of ``mask``.

    Every row must have at least one True position (callers validate).
    Masked positions come out exactly 0.
    """
    neg_inf = -np.inf
    shifted = np.where(mask, logits, neg_inf)
    m = shifted.max(axis=-1, keepdims=True)
    e = np.where(mask, np.exp(shifted - m), 0.0)
    return e / e.sum(axis=-1, keepdims=True)


def masked_softmax_grad(out, mask, g):
    dot = (g * out).sum(axis=-1, keepdims=True)
    return np.where(mask, out * (g - dot), 0.0)


def gru_reset(a_r, h):
    """r = sigmoid(a_r); returns (r * h, r)."""
    r = sigmoid(a_r)
    return r * h, r


def gru_reset_grad(r, h, g):
    return g * h * r * (1.0 - r), g * r


def gru_mix(a_u, a_c, h):
    """u = sigmoid(a_u); c = tanh(a_c); returns ((1-u)*h + u*c, u, c)."""
    u = sigmoid(a_u)
    c = np.tanh(a_c)
    return (1.0 - u) * h + u * c, u, c


def gru_mix_grad(u, c, h, g):
    da_u = g * (c - h) * u * (1.0 - u)
    da_c = g * u * (1.0 - c * c)
    dh = g * (1.0 - u)
    return da_u, da_c, dh


def adam_update(p, g, m, v, lr, beta1, beta2, eps, corr1, corr2):
    """One bias-corrected first/second-moment step, updating p/m/v in place.

    corr1, corr2 are the precomputed 1 - beta^t correction factors.
    """
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    p -= lr * (m / corr1) / (np.sqrt(v / corr2) + eps)


def sq_norm(a):
    f = a.reshape(-1)
    return float(np.dot(f, f))
