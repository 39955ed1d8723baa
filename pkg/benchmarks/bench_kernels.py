"""Benchmark the compiled kernel core against the numpy fallback.

Times the three hot kernels on representative shapes plus one end-to-end
model gradient, and prints a table with the speedup of the native
extension. Run from the repo root:

    python benchmarks/bench_kernels.py [--repeats 200]
"""

import argparse
import time

import numpy as np

from advkit.kernels import _fallback

try:
    from advkit.kernels import _native
except ImportError:
    _native = None


def timeit(fn, repeats):
    best = float("inf")
    for _ in range(3):
        t0 = time.perf_counter()
        for _ in range(repeats):
            fn()
        best = min(best, (time.perf_counter() - t0) / repeats)
    return best


def bench_case(name, make_args, fns, repeats):
    args = make_args()
    rows = {}
    for backend, fn in fns.items():
        rows[backend] = timeit(lambda: fn(*args), repeats)
    speedup = rows["fallback"] / rows["native"] if "native" in rows else float("nan")
    native_us = rows.get("native", float("nan")) * 1e6
    print(f"{name:34s} {rows['fallback'] * 1e6:10.1f} {native_us:10.1f} {speedup:9.2f}x")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=200)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    print(f"{'kernel':34s} {'fallback us':>10s} {'native us':>10s} {'speedup':>10s}")

    def conv_args(h, ci, co):
        return (
            rng.normal(size=(h, h, ci)),
            rng.normal(size=(co, ci, 3, 3)),
            rng.normal(size=co),
        )

    backends = {"fallback": _fallback}
    if _native is not None:
        backends["native"] = _native

    for h, ci, co, label in ((32, 3, 8, "conv2d fwd 32x32x3 -> 8"),
                             (16, 8, 16, "conv2d fwd 16x16x8 -> 16")):
        bench_case(
            label,
            lambda h=h, ci=ci, co=co: conv_args(h, ci, co),
            {k: b.conv2d_forward for k, b in backends.items()},
            args.repeats,
        )

    def bwd_args(h, ci, co):
        x, w, _b = conv_args(h, ci, co)
        return (x, w, rng.normal(size=(h, h, co)))

    for h, ci, co, label in ((32, 3, 8, "conv2d bwd 32x32x3 -> 8"),
                             (16, 8, 16, "conv2d bwd 16x16x8 -> 16")):
        bench_case(
            label,
            lambda h=h, ci=ci, co=co: bwd_args(h, ci, co),
            {k: b.conv2d_backward for k, b in backends.items()},
            args.repeats,
        )

    for k in (3, 11):
        img = rng.integers(0, 256, size=(32, 32, 3), dtype=np.uint8)
        bench_case(
            f"median filter 32x32x3 k={k}",
            lambda img=img, k=k: (img, k),
            {name: b.median_filter for name, b in backends.items()},
            args.repeats,
        )

    # end-to-end: one model loss/grad step under each backend
    import advkit.kernels as kernels
    from advkit.model import ModelParams, loss_and_grad

    params = ModelParams.initialize(0)
    img = rng.integers(0, 256, size=(32, 32, 3)).astype(np.float64)
    for name, backend in backends.items():
        kernels.conv2d_forward = backend.conv2d_forward
        kernels.conv2d_backward = backend.conv2d_backward
        t = timeit(lambda: loss_and_grad(params, img, 0), max(20, args.repeats // 10))
        print(f"{'loss_and_grad (' + name + ')':34s} {t * 1e6:10.1f}")
    kernels.conv2d_forward = (_native or _fallback).conv2d_forward
    kernels.conv2d_backward = (_native or _fallback).conv2d_backward

    if _native is None:
        print("\nnative extension not built; fallback only")


if __name__ == "__main__":
    main()
