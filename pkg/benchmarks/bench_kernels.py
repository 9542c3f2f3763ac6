"""Side-by-side timing of the numba kernels against the numpy fallback.

Usage:
    python3 benchmarks/bench_kernels.py [--repeats 200] [--rows 32]

Both implementations are imported directly, so the ALTERREAD_BACKEND flag
does not matter here. Matrix products are not benchmarked: they stay on
BLAS in both configurations.
"""

import argparse
import time

import numpy as np

from alterread.kernels import numpy_backend

try:
    from alterread.kernels import numba_backend
except ImportError:
    numba_backend = None


def timed(fn, args, repeats):
    fn(*args)  # warm-up (also pays any JIT cost)
    start = time.perf_counter()
    for _ in range(repeats):
        fn(*args)
    return (time.perf_counter() - start) / repeats


def benchmark_cases(rows, doc_len, width, embed_rows):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(rows, width))
    y = rng.normal(size=(rows, width))
    h = rng.normal(size=(rows, width))
    g = rng.normal(size=(rows, width))
    logits = rng.normal(size=(rows, doc_len)) * 5
    mask = rng.random((rows, doc_len)) < 0.9
    mask[:, 0] = True
    soft = numpy_backend.masked_softmax(logits, mask)
    gl = rng.normal(size=(rows, doc_len))
    emb = rng.normal(size=(embed_rows, 384))
    emb_g = rng.normal(size=(embed_rows, 384))
    m = np.zeros_like(emb)
    v = np.zeros_like(emb)
    big = rng.normal(size=embed_rows * 384)

    return [
        ("sigmoid", (x,)),
        ("sigmoid_grad", (numpy_backend.sigmoid(x), g)),
        ("tanh_grad", (np.tanh(x), g)),
        ("gru_reset", (x, h)),
        ("gru_mix", (x, y, h)),
        ("gru_mix_grad", (numpy_backend.sigmoid(x), np.tanh(y), h, g)),
        ("masked_softmax", (logits, mask)),
        ("masked_softmax_grad", (soft, mask, gl)),
        ("adam_update", (emb, emb_g, m, v, 1e-3, 0.9, 0.999, 1e-8,
                         0.1, 0.001)),
        ("all_finite", (big,)),
        # sq_norm is absent: both backends share the BLAS np.dot version
    ]


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=200)
    parser.add_argument("--rows", type=int, default=32,
                        help="batch rows for the elementwise kernels")
    parser.add_argument("--doc-len", type=int, default=750)
    parser.add_argument("--width", type=int, default=128)
    parser.add_argument("--embed-rows", type=int, default=5000)
    args = parser.parse_args()

    if numba_backend is None:
        print("numba is not importable; nothing to compare")
        return

    cases = benchmark_cases(args.rows, args.doc_len, args.width,
                            args.embed_rows)
    print(f"{'kernel':22s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, call_args in cases:
        t_np = timed(getattr(numpy_backend, name), call_args, args.repeats)
        t_nb = timed(getattr(numba_backend, name), call_args, args.repeats)
        print(f"{name:22s} {t_np * 1e3:10.4f} {t_nb * 1e3:10.4f} "
              f"{t_np / t_nb:7.2f}x")


if __name__ == "__main__":
    main()
