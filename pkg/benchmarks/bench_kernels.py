"""Compare the compiled conv/pool kernels against the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeats N]

Times the four kernel entry points on training-shaped batches and reports
per-call milliseconds plus the speedup of the compiled extension. Exits with
a note when the extension is not built.
"""

import argparse
import time

import numpy as np

from distillaug._kernels import reference

try:
    from distillaug._kernels import _conv as compiled
except ImportError:
    compiled = None


def bench(fn, args, repeats):
    fn(*args)  # warm-up
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best * 1e3


def cases():
    rng = np.random.default_rng(0)
    for name, (n, h, w, cin, cout) in (
        ("conv 28x28x1 -> 16", (50, 28, 28, 1, 16)),
        ("conv 14x14x16 -> 32", (50, 14, 14, 16, 32)),
    ):
        x = rng.normal(size=(n, h, w, cin))
        wts = rng.normal(size=(3, 3, cin, cout))
        b = rng.normal(size=cout)
        dy = rng.normal(size=(n, h, w, cout))
        yield f"{name} forward", "conv2d_forward", (x, wts, b)
        yield f"{name} backward", "conv2d_backward", (x, wts, dy)
    x = rng.normal(size=(50, 28, 28, 16))
    yield "pool 28x28x16 forward", "maxpool2_forward", (x,)
    _, idx = reference.maxpool2_forward(x)
    dy = rng.normal(size=(50, 14, 14, 16))
    yield "pool 28x28x16 backward", "maxpool2_backward", (dy, idx, 28, 28)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    if compiled is None:
        print("compiled extension not built; showing numpy fallback only")
    print(f"{'case':<28}{'python ms':>12}{'compiled ms':>14}{'speedup':>10}")
    for label, fname, fargs in cases():
        py = bench(getattr(reference, fname), fargs, args.repeats)
        if compiled is None:
            print(f"{label:<28}{py:>12.3f}{'-':>14}{'-':>10}")
        else:
            cy = bench(getattr(compiled, fname), fargs, args.repeats)
            print(f"{label:<28}{py:>12.3f}{cy:>14.3f}{py / cy:>9.2f}x")


if __name__ == "__main__":
    main()
