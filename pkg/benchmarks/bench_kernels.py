"""Benchmark the jitted kernels against the pure-numpy fallback.

Run with:  python3 benchmarks/bench_kernels.py
The jit path must be active (REGIONAUG_NUMBA unset or != 0) so both
implementations can be timed in one process.
"""

import time

import numpy as np

from regionaug import kernels


def _time(fn, *args, repeat=5):
    fn(*args)  # warm-up (includes jit compilation)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    if not kernels.numba_enabled():
        print("numba path unavailable (REGIONAUG_NUMBA=0 or numba missing); "
              "benchmark compares the fallback against itself.")
    rng = np.random.default_rng(0)

    x = rng.normal(size=(8, 64, 32, 32)).astype(np.float32)
    cols = kernels.im2col(x, 3, 3, 2, 1)
    img = rng.normal(size=(3, 17, 23)).astype(np.float32)

    cases = [
        ("im2col 8x64x32x32 k3 s2", kernels.im2col, kernels.im2col_numpy,
         (x, 3, 3, 2, 1)),
        ("col2im (adjoint of above)", kernels.col2im, kernels.col2im_numpy,
         (cols, x.shape, 3, 3, 2, 1)),
        ("bilinear 3x17x23 -> 64x64", kernels.bilinear_resize, kernels.bilinear_numpy,
         (img, 64, 64)),
    ]

    print(f"{'kernel':<30} {'jit (ms)':>10} {'numpy (ms)':>12} {'speedup':>9}")
    for name, fast, slow, args in cases:
        t_fast = _time(fast, *args)
        t_slow = _time(slow, *args)
        out_fast, out_slow = fast(*args), slow(*args)
        assert np.allclose(out_fast, out_slow, atol=1e-5), name
        print(f"{name:<30} {t_fast * 1e3:>10.3f} {t_slow * 1e3:>12.3f} "
              f"{t_slow / t_fast:>8.1f}x")


if __name__ == "__main__":
    main()
