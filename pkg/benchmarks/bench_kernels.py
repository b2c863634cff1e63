"""
Compare the numba and numpy kernel paths on SmallCnn-sized inputs.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Calls both implementations directly, so the XENSEMBLE_DISABLE_NUMBA flag
does not matter here. The first numba call (compilation or cache load) is
excluded from the timings.
"""
import argparse
import timeit

import numpy as np

from xensemble import _kernels as K
from xensemble.shap import shapley_weights


def cases(rng):
    x1 = rng.uniform(size=(16, 1, 28, 28))
    w1 = rng.normal(size=(8, 1, 3, 3))
    x2 = rng.uniform(size=(16, 8, 14, 14))
    w2 = rng.normal(size=(16, 8, 3, 3))
    d2 = rng.normal(size=(16, 16, 14, 14))
    pool_in = rng.normal(size=(16, 16, 14, 14))
    n = 12
    values = rng.normal(size=1 << n)
    weights = shapley_weights(n)
    return {
        "conv1 forward  [16,1,28,28]": (K.numba_conv2d_forward, K.numpy_conv2d_forward, (x1, w1, np.zeros(8))),
        "conv2 forward  [16,8,14,14]": (K.numba_conv2d_forward, K.numpy_conv2d_forward, (x2, w2, np.zeros(16))),
        "conv2 backward [16,8,14,14]": (K.numba_conv2d_backward, K.numpy_conv2d_backward, (x2, w2, d2)),
        "maxpool2 fwd   [16,16,14,14]": (K.numba_maxpool2_forward, K.numpy_maxpool2_forward, (pool_in,)),
        "shapley n=12 (4096 values)": (K.numba_shapley_from_values, K.numpy_shapley_from_values, (values, weights)),
    }


def best_ms(fn, args, repeat):
    return 1e3 * min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    opts = ap.parse_args()
    if not K.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    print(f"{'kernel':32s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for name, (nb, npy, args) in cases(np.random.default_rng(0)).items():
        a, b = nb(*args), npy(*args)  # warm-up, and a sanity check
        for u, v in zip(a if isinstance(a, tuple) else (a,), b if isinstance(b, tuple) else (b,)):
            assert np.allclose(u, v, atol=1e-10)
        t_nb = best_ms(nb, args, opts.repeat)
        t_np = best_ms(npy, args, opts.repeat)
        print(f"{name:32s} {t_nb:10.3f} {t_np:10.3f} {t_np / t_nb:7.1f}x")


if __name__ == "__main__":
    main()
