"""Compare the compiled and numpy kernel backends on the shapes the desk model uses.

Run: python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import time

import numpy as np

from refsam3d.numerics import backend
from refsam3d.numerics.conv import ConvSpec, conv3d
from refsam3d.numerics.tensor import Tensor

# (name, input shape, kernel, stride, padding, c_out, groups, transposed)
CASES = [
    ("patch 1x4x4 s4", (1, 1, 32, 32, 32), (1, 4, 4), (1, 4, 4), (0, 0, 0), 64, 1, False),
    ("depth dw 4x1x1 s4", (1, 64, 32, 8, 8), (4, 1, 1), (4, 1, 1), (0, 0, 0), 64, 64, False),
    ("adapter dw 3^3", (1, 8, 8, 8, 8), (3, 3, 3), (1, 1, 1), (1, 1, 1), 8, 8, False),
    ("up 2x2x2 s2", (1, 32, 16, 16, 16), (2, 2, 2), (2, 2, 2), (0, 0, 0), 16, 1, True),
    ("up 3^3 s1", (1, 16, 32, 32, 32), (3, 3, 3), (1, 1, 1), (1, 1, 1), 8, 1, True),
    ("fuse 3^3", (1, 9, 32, 32, 32), (3, 3, 3), (1, 1, 1), (1, 1, 1), 1, 1, False),
]


def time_case(shape, kernel, stride, padding, c_out, groups, transposed, repeat, rng):
    spec = ConvSpec(kernel, stride, padding, groups, transposed)
    x = Tensor(rng.standard_normal(shape).astype(np.float32), requires_grad=True)
    w = Tensor(rng.standard_normal(spec.weight_shape(shape[1], c_out)).astype(np.float32), requires_grad=True)
    best = float("inf")
    for _ in range(repeat):
        x.grad = w.grad = None
        t0 = time.perf_counter()
        y = conv3d(x, w, None, spec)
        y.sum().backward()
        best = min(best, time.perf_counter() - t0)
    return best


def time_kernels(shape, kernel, repeat, rng):
    """vol2col + col2vol alone on a padded stride-1 input."""
    x = np.ascontiguousarray(rng.standard_normal(shape).astype(np.float32))
    B, C, Dp, Hp, Wp = shape
    kd, kh, kw = kernel
    od, oh, ow = Dp - kd + 1, Hp - kh + 1, Wp - kw + 1
    best = [float("inf"), float("inf")]
    for _ in range(repeat):
        t0 = time.perf_counter()
        cols = backend.vol2col(x, kd, kh, kw, 1, 1, 1, od, oh, ow)
        t1 = time.perf_counter()
        backend.col2vol(cols, C, Dp, Hp, Wp, kd, kh, kw, 1, 1, 1, od, oh, ow)
        t2 = time.perf_counter()
        best = [min(best[0], t1 - t0), min(best[1], t2 - t1)]
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    names = backend.available()
    print(f"backends: {names}; best of {args.repeat}, forward+backward, float32")
    print(f"{'case':<20}" + "".join(f"{n:>12}" for n in names) + ("  speedup" if len(names) == 2 else ""))
    for name, *params in CASES:
        times = []
        for b in names:
            backend.use_backend(b)
            times.append(time_case(*params, args.repeat, np.random.default_rng(0)))
        line = f"{name:<20}" + "".join(f"{t * 1e3:10.2f}ms" for t in times)
        if len(names) == 2:
            line += f"  {times[1] / times[0]:6.2f}x"
        print(line)
    print()
    print("raw kernels, (1, 16, 34, 34, 34) input, 3^3 window")
    for b in names:
        backend.use_backend(b)
        v, c = time_kernels((1, 16, 34, 34, 34), (3, 3, 3), args.repeat, np.random.default_rng(0))
        print(f"  {b:<10} vol2col {v * 1e3:8.2f}ms  col2vol {c * 1e3:8.2f}ms")


if __name__ == "__main__":
    main()
