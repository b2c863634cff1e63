"""The numba and numpy kernel paths must agree; both against a naive loop oracle."""

import os
import subprocess
import sys

import numpy as np
import pytest

from xensemble import _kernels as K

pytestmark = pytest.mark.skipif(not K.HAVE_NUMBA, reason="numba not installed")


def naive_conv(x, w, b):
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    out = np.zeros((n, o, h, wd))
    for s in range(n):
        for oc in range(o):
            for r in range(h):
                for q in range(wd):
                    out[s, oc, r, q] = b[oc] + np.sum(w[oc] * xp[s, :, r:r + k, q:q + k])
    return out


@pytest.mark.parametrize("shape,o,k", [((2, 1, 5, 6), 3, 3), ((1, 3, 7, 4), 2, 5), ((3, 2, 4, 4), 4, 1)])
def test_conv_forward_paths_agree(rng, shape, o, k):
    x = rng.normal(size=shape)
    w = rng.normal(size=(o, shape[1], k, k))
    b = rng.normal(size=o)
    ref = naive_conv(x, w, b)
    np.testing.assert_allclose(K.numpy_conv2d_forward(x, w, b), ref, rtol=0, atol=1e-12)
    np.testing.assert_allclose(K.numba_conv2d_forward(x, w, b), ref, rtol=0, atol=1e-12)


def test_conv_backward_paths_agree(rng):
    x = rng.normal(size=(2, 3, 6, 5))
    w = rng.normal(size=(4, 3, 3, 3))
    d = rng.normal(size=(2, 4, 6, 5))
    a = K.numpy_conv2d_backward(x, w, d)
    b = K.numba_conv2d_backward(x, w, d)
    for u, v in zip(a, b):
        np.testing.assert_allclose(u, v, rtol=0, atol=1e-12)


def test_conv_backward_matches_finite_difference(rng):
    x = rng.normal(size=(1, 2, 4, 4))
    w = rng.normal(size=(2, 2, 3, 3))
    b = rng.normal(size=2)
    d = rng.normal(size=(1, 2, 4, 4))
    dx, dw, db = K.numpy_conv2d_backward(x, w, d)
    h = 1e-6
    f = lambda xx, ww, bb: np.sum(d * naive_conv(xx, ww, bb))
    e = np.zeros_like(w)
    e[1, 0, 2, 1] = h
    assert abs((f(x, w + e, b) - f(x, w - e, b)) / (2 * h) - dw[1, 0, 2, 1]) < 1e-6
    e = np.zeros_like(x)
    e[0, 1, 0, 3] = h
    assert abs((f(x + e, w, b) - f(x - e, w, b)) / (2 * h) - dx[0, 1, 0, 3]) < 1e-6
    np.testing.assert_allclose(db, d.sum(axis=(0, 2, 3)))


def test_maxpool_paths_agree_and_tie_order(rng):
    x = rng.normal(size=(2, 3, 7, 6))  # odd height: last row is dropped
    x[0, 0, :2, :2] = 1.0  # four-way tie -> first (top-left)
    o1, a1 = K.numpy_maxpool2_forward(x)
    o2, a2 = K.numba_maxpool2_forward(x)
    assert o1.shape == (2, 3, 3, 3)
    np.testing.assert_array_equal(o1, o2)
    np.testing.assert_array_equal(a1, a2)
    assert a1[0, 0, 0, 0] == 0
    d = rng.normal(size=o1.shape)
    g1 = K.numpy_maxpool2_backward(d, a1, x.shape)
    g2 = K.numba_maxpool2_backward(d, a2, x.shape)
    np.testing.assert_array_equal(g1, g2)
    assert g1[0, 0, 0, 0] == d[0, 0, 0, 0] and g1[0, 0, 1, 1] == 0.0
    assert np.all(g1[:, :, 6, :] == 0.0)


def test_shapley_kernel_paths_agree(rng):
    n = 7
    values = rng.normal(size=1 << n)
    weights = rng.uniform(size=n)
    np.testing.assert_allclose(
        K.numba_shapley_from_values(values, weights), K.numpy_shapley_from_values(values, weights), rtol=0, atol=1e-12
    )


def test_env_flag_selects_numpy():
    code = "import xensemble._kernels as K; print(K.backend())"
    env = dict(os.environ, XENSEMBLE_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
    env["XENSEMBLE_DISABLE_NUMBA"] = "0"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numba"


def test_model_output_identical_across_backends(monkeypatch, rng):
    from xensemble.models import SmallCnn

    m = SmallCnn((1, 12, 12), (3, 4), hidden=(5,), seed=3)
    x = rng.uniform(size=(4, 1, 12, 12))
    y = np.array([0, 1, 1, 0])
    monkeypatch.setattr(K, "USE_NUMBA", True)
    l1, g1 = m.loss_and_grads(x, y)
    monkeypatch.setattr(K, "USE_NUMBA", False)
    l2, g2 = m.loss_and_grads(x, y)
    assert abs(l1 - l2) < 1e-12
    for k in g1:
        np.testing.assert_allclose(g1[k], g2[k], rtol=0, atol=1e-12)
