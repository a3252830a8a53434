"""Time the compiled kernels against the numpy fallback on training-sized inputs.

    python3 benchmarks/bench_kernels.py [--repeat N]

Also checks that both backends return identical bytes for every case.
"""

import argparse
import timeit

import numpy as np

from scvq import _kernels_py

try:
    from scvq import _kernels as compiled
except ImportError:
    compiled = None

# (label, input shape NHWC, kernel, stride, pad): shapes seen by the desk codec
CONV_CASES = [
    ("stem 3x3", (4, 32, 32, 3), 3, 1, 1),
    ("block 3x3", (4, 32, 32, 32), 3, 1, 1),
    ("down 4x4/2", (4, 32, 32, 32), 4, 2, 1),
    ("block 3x3 @8", (4, 8, 8, 64), 3, 1, 1),
]
NEAREST_CASES = [("4 images, L=128", 64, 128, 32), ("eval batch, L=128", 800, 128, 32)]


def bench(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat)) * 1e3


def row(label, t_py, t_c):
    if t_c is None:
        return f"{label:<28}{t_py:>10.3f}{'n/a':>10}{'':>9}"
    return f"{label:<28}{t_py:>10.3f}{t_c:>10.3f}{t_py / t_c:>8.2f}x"


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'kernel':<28}{'numpy ms':>10}{'cython ms':>10}{'speedup':>9}")

    for label, shape, k, s, p in CONV_CASES:
        x = rng.standard_normal(shape).astype(np.float32)
        cols = _kernels_py.im2col(x, k, k, s, p)
        g = rng.standard_normal(cols.shape).astype(np.float32)
        for name, py, cy in (
            ("im2col", lambda: _kernels_py.im2col(x, k, k, s, p),
             compiled and (lambda: compiled.im2col(x, k, k, s, p))),
            ("col2im", lambda: _kernels_py.col2im(g, x.shape, k, k, s, p),
             compiled and (lambda: compiled.col2im(g, x.shape, k, k, s, p))),
        ):
            if cy:
                assert py().tobytes() == cy().tobytes(), f"{name} {label}: backends differ"
            print(row(f"{name} {label}", bench(py, args.repeat), cy and bench(cy, args.repeat)))

    for label, n, L, q in NEAREST_CASES:
        z = rng.standard_normal((n, q)).astype(np.float32)
        codes = rng.standard_normal((L, q)).astype(np.float32)
        py = lambda: _kernels_py.nearest_code(z, codes)  # noqa: E731
        cy = compiled and (lambda: compiled.nearest_code(z, codes))
        if cy:
            assert np.array_equal(py()[0], cy()[0])
        print(row(f"nearest {label}", bench(py, args.repeat), cy and bench(cy, args.repeat)))

    if compiled is None:
        print("compiled extension not built; run `pip install --no-build-isolation -e .`")


if __name__ == "__main__":
    main()
