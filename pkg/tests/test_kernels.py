"""Backend parity: the numba kernels must agree with the numpy reference,
and the env flag must select the implementation."""

import os
import subprocess
import sys

import numpy as np
import pytest

from alterread.kernels import numpy_backend

try:
    from alterread.kernels import numba_backend
except ImportError:  # pragma: no cover
    numba_backend = None

needs_numba = pytest.mark.skipif(numba_backend is None,
                                 reason="numba unavailable")

RNG = np.random.default_rng(202)


@needs_numba
def test_all_finite_agrees():
    clean = RNG.normal(size=(17, 5))
    assert numba_backend.all_finite(clean)
    assert numpy_backend.all_finite(clean)
    for bad in (np.nan, np.inf, -np.inf):
        dirty = clean.copy()
        dirty[3, 2] = bad
        assert not numba_backend.all_finite(dirty)
        assert not numpy_backend.all_finite(dirty)


@needs_numba
@pytest.mark.parametrize("shape", [(64,), (8, 9), (3, 4, 5)])
def test_elementwise_kernels_agree(shape):
    x = RNG.normal(size=shape) * 4
    y = RNG.normal(size=shape)
    g = RNG.normal(size=shape)
    np.testing.assert_allclose(numba_backend.sigmoid(x),
                               numpy_backend.sigmoid(x), rtol=1e-15)
    s = numpy_backend.sigmoid(x)
    np.testing.assert_allclose(numba_backend.sigmoid_grad(s, g),
                               numpy_backend.sigmoid_grad(s, g), rtol=1e-15)
    t = np.tanh(x)
    np.testing.assert_allclose(numba_backend.tanh_grad(t, g),
                               numpy_backend.tanh_grad(t, g), rtol=1e-15)
    rh_a, r_a = numba_backend.gru_reset(x, y)
    rh_b, r_b = numpy_backend.gru_reset(x, y)
    np.testing.assert_allclose(rh_a, rh_b, rtol=1e-15)
    np.testing.assert_allclose(r_a, r_b, rtol=1e-15)
    for a, b in zip(numba_backend.gru_reset_grad(r_a, y, g),
                    numpy_backend.gru_reset_grad(r_b, y, g)):
        np.testing.assert_allclose(a, b, rtol=1e-15)
    h = RNG.normal(size=shape)
    out_a, u_a, c_a = numba_backend.gru_mix(x, y, h)
    out_b, u_b, c_b = numpy_backend.gru_mix(x, y, h)
    np.testing.assert_allclose(out_a, out_b, rtol=1e-14, atol=1e-16)
    for a, b in zip(numba_backend.gru_mix_grad(u_a, c_a, h, g),
                    numpy_backend.gru_mix_grad(u_b, c_b, h, g)):
        np.testing.assert_allclose(a, b, rtol=1e-14, atol=1e-16)


@needs_numba
def test_masked_softmax_agrees():
    logits = RNG.normal(size=(6, 11)) * 7
    mask = RNG.random((6, 11)) < 0.6
    mask[:, 0] = True
    a = numba_backend.masked_softmax(logits, mask)
    b = numpy_backend.masked_softmax(logits, mask)
    np.testing.assert_allclose(a, b, rtol=1e-14, atol=1e-17)
    g = RNG.normal(size=(6, 11))
    np.testing.assert_allclose(numba_backend.masked_softmax_grad(a, mask, g),
                               numpy_backend.masked_softmax_grad(b, mask, g),
                               rtol=1e-13, atol=1e-17)


@needs_numba
def test_adam_update_agrees():
    p0 = RNG.normal(size=(13, 7))
    g = RNG.normal(size=(13, 7))
    args = dict(lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8,
                corr1=0.1, corr2=0.001)
    pa, ma, va = p0.copy(), np.zeros_like(p0), np.zeros_like(p0)
    pb, mb, vb = p0.copy(), np.zeros_like(p0), np.zeros_like(p0)
    numba_backend.adam_update(pa, g, ma, va, **args)
    numpy_backend.adam_update(pb, g, mb, vb, **args)
    np.testing.assert_allclose(pa, pb, rtol=1e-15)
    np.testing.assert_allclose(ma, mb, rtol=1e-15)
    np.testing.assert_allclose(va, vb, rtol=1e-15)


@needs_numba
def test_sq_norm_agrees():
    x = RNG.normal(size=257)
    assert abs(numba_backend.sq_norm(x) - numpy_backend.sq_norm(x)) < 1e-10


@pytest.mark.parametrize("backend", ["numpy", "numba"])
def test_env_flag_selects_backend(backend):
    if backend == "numba" and numba_backend is None:
        pytest.skip("numba unavailable")
    env = dict(os.environ, ALTERREAD_BACKEND=backend)
    out = subprocess.run(
        [sys.executable, "-c",
         "import alterread.kernels as k; print(k.BACKEND)"],
        env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == backend


def test_bad_env_flag_rejected():
    env = dict(os.environ, ALTERREAD_BACKEND="cuda")
    out = subprocess.run(
        [sys.executable, "-c", "import alterread.kernels"],
        env=env, capture_output=True, text=True)
    assert out.returncode != 0
    assert "ALTERREAD_BACKEND" in out.stderr
