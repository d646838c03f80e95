"""Benchmark the compiled convolution kernels against the numpy fallback.

Times im2col / col2im on shapes drawn from the default model, plus one full
conv2d forward+backward through the autodiff layer under each backend.

Run: python benchmarks/bench_kernels.py [--repeats 20]
"""

import argparse
import importlib
import os
import sys
import time

import numpy as np


def timeit(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_backends(repeats):
    from segdiff.kernels import numpy_backend

    try:
        from segdiff.kernels import _conv_ext
    except ImportError:
        print("compiled extension not built; nothing to compare")
        return

    cases = [
        ("enc 32ch 32x32", (8, 32, 32, 32), 3, 1, 1),
        ("enc 64ch 16x16", (8, 64, 16, 16), 3, 1, 1),
        ("enc 64ch 8x8", (8, 64, 8, 8), 3, 1, 1),
        ("down stride2", (8, 32, 32, 32), 3, 2, 1),
        ("rrdb 48ch 32x32", (8, 48, 32, 32), 3, 1, 1),
    ]
    gen = np.random.default_rng(0)
    print(f"{'case':<18} {'kernel':<8} {'numpy':>10} {'compiled':>10} {'speedup':>8}")
    for name, shape, k, stride, pad in cases:
        x = gen.standard_normal(shape)
        t_np = timeit(lambda: numpy_backend.im2col(x, k, k, stride, pad), repeats)
        t_c = timeit(lambda: _conv_ext.im2col(x, k, k, stride, pad), repeats)
        print(f"{name:<18} {'im2col':<8} {t_np * 1e3:>8.2f}ms {t_c * 1e3:>8.2f}ms "
              f"{t_np / t_c:>7.2f}x")
        col = numpy_backend.im2col(x, k, k, stride, pad)
        C, H, W = shape[1:]
        t_np = timeit(lambda: numpy_backend.col2im(col, C, H, W, k, k, stride, pad), repeats)
        t_c = timeit(lambda: _conv_ext.col2im(col, C, H, W, k, k, stride, pad), repeats)
        print(f"{name:<18} {'col2im':<8} {t_np * 1e3:>8.2f}ms {t_c * 1e3:>8.2f}ms "
              f"{t_np / t_c:>7.2f}x")


def bench_conv_layer(repeats):
    """Full conv2d forward+backward per backend, via a fresh import."""
    results = {}
    for backend in ("numpy", "compiled"):
        os.environ["SEGDIFF_KERNELS"] = backend
        for mod in [m for m in list(sys.modules) if m.startswith("segdiff")]:
            del sys.modules[mod]
        try:
            segdiff = importlib.import_module("segdiff")
        except Exception as e:
            print(f"backend {backend}: import failed ({e})")
            continue
        if segdiff.backend_name() != backend:
            print(f"backend {backend}: unavailable, got {segdiff.backend_name()}")
            continue
        from segdiff.ops import conv2d
        from segdiff.tensor import Tensor, sum_all

        gen = np.random.default_rng(1)
        x = Tensor(gen.standard_normal((8, 32, 32, 32)), requires_grad=True)
        w = Tensor(gen.standard_normal((32, 32, 3, 3)) * 0.1, requires_grad=True)
        b = Tensor(np.zeros(32), requires_grad=True)

        def step():
            x.grad = w.grad = b.grad = None
            sum_all(conv2d(x, w, b, stride=1, padding=1)).backward()

        results[backend] = timeit(step, repeats)
    os.environ.pop("SEGDIFF_KERNELS", None)
    print()
    for backend, t in results.items():
        print(f"conv2d fwd+bwd (8x32x32x32, 3x3): {backend:<8} {t * 1e3:8.2f}ms")
    if len(results) == 2:
        print(f"layer-level speedup: {results['numpy'] / results['compiled']:.2f}x")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()
    bench_backends(args.repeats)
    bench_conv_layer(args.repeats)


if __name__ == "__main__":
    main()
