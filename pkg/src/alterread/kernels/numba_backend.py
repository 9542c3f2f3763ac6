"""numba-compiled kernels; one fused pass where the numpy path makes several.

Formulas mirror ``numpy_backend`` exactly (fastmath stays off so the two
backends agree to rounding). Compiled artifacts are cached on disk, so the
JIT cost is paid once per machine.
"""

import math

import numpy as np
from numba import njit

NAME = "numba"

_jit = {"cache": True, "nogil": True, "fastmath": False}


@njit(**_jit)
def _all_finite_flat(a):
    for i in range(a.size):
        if not math.isfinite(a[i]):
            return False
    return True


def all_finite(a):
    return bool(_all_finite_flat(np.ravel(a)))


@njit(**_jit)
def _sigm(x):
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@njit(**_jit)
def _sigmoid_flat(x, out):
    for i in range(x.size):
        out[i] = _sigm(x[i])


def sigmoid(x):
    out = np.empty_like(x)
    _sigmoid_flat(np.ravel(x), out.reshape(-1))
    return out


@njit(**_jit)
def _sigmoid_grad_flat(y, g, out):
    for i in range(y.size):
        out[i] = g[i] * y[i] * (1.0 - y[i])


def sigmoid_grad(y, g):
    out = np.empty_like(y)
    _sigmoid_grad_flat(np.ravel(y), np.ravel(g), out.reshape(-1))
    return out


@njit(**_jit)
def _tanh_grad_flat(y, g, out):
    for i in range(y.size):
        out[i] = g[i] * (1.0 - y[i] * y[i])


def tanh_grad(y, g):
    out = np.empty_like(y)
    _tanh_grad_flat(np.ravel(y), np.ravel(g), out.reshape(-1))
    return out


@njit(**_jit)
def _masked_softmax2d(logits, mask, out):
    rows, n = logits.shape
    for r in range(rows):
        m = -np.inf
        for i in range(n):
            if mask[r, i] and logits[r, i] > m:
                m = logits[r, i]
        total = 0.0
        for i in range(n):
            if mask[r, i]:
                e = math.exp(logits[r, i] - m)
                out[r, i] = e
                total += e
            else:
                out[r, i] = 0.0
        for i in range(n):
            out[r, i] /= total


def masked_softmax(logits, mask):
    """Row-wise exp-normalization over the True positions of ``mask``.

    Every row must have at least one True position (callers validate).
    """
    l2 = np.ascontiguousarray(logits).reshape(-1, logits.shape[-1])
    m2 = np.ascontiguousarray(mask).reshape(-1, mask.shape[-1])
    out = np.empty_like(l2)
    _masked_softmax2d(l2, m2, out)
    return out.reshape(logits.shape)


@njit(**_jit)
def _masked_softmax2d_grad(out, mask, g, dl):
    rows, n = out.shape
    for r in range(rows):
        dot = 0.0
        for i in range(n):
            dot += g[r, i] * out[r, i]
        for i in range(n):
            if mask[r, i]:
                dl[r, i] = out[r, i] * (g[r, i] - dot)
            else:
                dl[r, i] = 0.0


def masked_softmax_grad(out, mask, g):
    o2 = np.ascontiguousarray(out).reshape(-1, out.shape[-1])
    m2 = np.ascontiguousarray(mask).reshape(-1, mask.shape[-1])
    g2 = np.ascontiguousarray(g).reshape(-1, g.shape[-1])
    dl = np.empty_like(o2)
    _masked_softmax2d_grad(o2, m2, g2, dl)
    return dl.reshape(out.shape)


@njit(**_jit)
def _gru_reset_flat(a_r, h, rh, r):
    for i in range(a_r.size):
        ri = _sigm(a_r[i])
        r[i] = ri
        rh[i] = ri * h[i]


def gru_reset(a_r, h):
    rh = np.empty_like(a_r)
    r = np.empty_like(a_r)
    _gru_reset_flat(np.ravel(a_r), np.ravel(h), rh.reshape(-1), r.reshape(-1))
    return rh, r


@njit(**_jit)
def _gru_reset_grad_flat(r, h, g, da_r, dh):
    for i in range(r.size):
        da_r[i] = g[i] * h[i] * r[i] * (1.0 - r[i])
        dh[i] = g[i] * r[i]


def gru_reset_grad(r, h, g):
    da_r = np.empty_like(r)
    dh = np.empty_like(r)
    _gru_reset_grad_flat(np.ravel(r), np.ravel(h), np.ravel(g),
                         da_r.reshape(-1), dh.reshape(-1))
    return da_r, dh


@njit(**_jit)
def _gru_mix_flat(a_u, a_c, h, out, u, c):
    for i in range(a_u.size):
        ui = _sigm(a_u[i])
        ci = math.tanh(a_c[i])
        u[i] = ui
        c[i] = ci
        out[i] = (1.0 - ui) * h[i] + ui * ci


def gru_mix(a_u, a_c, h):
    out = np.empty_like(a_u)
    u = np.empty_like(a_u)
    c = np.empty_like(a_u)
    _gru_mix_flat(np.ravel(a_u), np.ravel(a_c), np.ravel(h),
                  out.reshape(-1), u.reshape(-1), c.reshape(-1))
    return out, u, c


@njit(**_jit)
def _gru_mix_grad_flat(u, c, h, g, da_u, da_c, dh):
    for i in range(u.size):
        da_u[i] = g[i] * (c[i] - h[i]) * u[i] * (1.0 - u[i])
        da_c[i] = g[i] * u[i] * (1.0 - c[i] * c[i])
        dh[i] = g[i] * (1.0 - u[i])


def gru_mix_grad(u, c, h, g):
    da_u = np.empty_like(u)
    da_c = np.empty_like(u)
    dh = np.empty_like(u)
    _gru_mix_grad_flat(np.ravel(u), np.ravel(c), np.ravel(h), np.ravel(g),
                       da_u.reshape(-1), da_c.reshape(-1), dh.reshape(-1))
    return da_u, da_c, dh


@njit(**_jit)
def _adam_flat(p, g, m, v, lr, beta1, beta2, eps, corr1, corr2):
    for i in range(p.size):
        mi = beta1 * m[i] + (1.0 - beta1) * g[i]
        vi = beta2 * v[i] + (1.0 - beta2) * (g[i] * g[i])
        m[i] = mi
        v[i] = vi
        p[i] -= lr * (mi / corr1) / (math.sqrt(vi / corr2) + eps)


def adam_update(p, g, m, v, lr, beta1, beta2, eps, corr1, corr2):
    """One bias-corrected moment step, updating p/m/v in place."""
    _adam_flat(p.reshape(-1), np.ravel(g), m.reshape(-1), v.reshape(-1),
               lr, beta1, beta2, eps, corr1, corr2)


# sum of squares is a BLAS dot; a compiled scalar loop measures slower,
# so both backends share the numpy implementation
from .numpy_backend import sq_norm  # noqa: E402
