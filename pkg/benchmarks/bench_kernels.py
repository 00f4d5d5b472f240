"""Time the compiled kernels against the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]

Shapes match one training batch of the MNIST conv schedule. Every kernel's
outputs are also checked for bit-identity between the two backends.
"""
import argparse
import timeit

import numpy as np

from forward_thinking.kernels import compiled_backend, python_backend


def cases(rng):
    x = rng.random((64, 16, 28, 28))
    cols = python_backend.im2col3(x)
    pooled, idx = python_backend.maxpool2_forward(x)
    dout = rng.random(pooled.shape)
    imgs = rng.random((256, 28, 28))
    ang = rng.uniform(-0.3, 0.3, 256)
    mats = np.zeros((256, 2, 3))
    mats[:, 0, 0] = mats[:, 1, 1] = np.cos(ang)
    mats[:, 0, 1], mats[:, 1, 0] = -np.sin(ang), np.sin(ang)
    mats[:, :, 2] = rng.uniform(-2, 2, (256, 2))
    return {
        "im2col3 [64,16,28,28]": ("im2col3", (x,)),
        "col2im3 [64,16,28,28]": ("col2im3", (cols, 16, 28, 28)),
        "maxpool2_forward": ("maxpool2_forward", (x,)),
        "maxpool2_backward": ("maxpool2_backward", (dout, idx, 28, 28)),
        "affine_warp [256,28,28]": ("affine_warp", (imgs, mats)),
    }


def same(a, b):
    if isinstance(a, tuple):
        return all(same(p, q) for p, q in zip(a, b))
    return np.array_equal(a, b)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if compiled_backend is None:
        raise SystemExit("compiled extension not built; run pip install --no-build-isolation -e .")
    print(f"{'kernel':26s} {'python ms':>10s} {'compiled ms':>12s} {'speedup':>8s}  identical")
    for name, (fn, argv) in cases(np.random.default_rng(0)).items():
        py, cy = getattr(python_backend, fn), getattr(compiled_backend, fn)
        t_py = min(timeit.repeat(lambda: py(*argv), number=1, repeat=args.repeat))
        t_cy = min(timeit.repeat(lambda: cy(*argv), number=1, repeat=args.repeat))
        print(f"{name:26s} {1e3 * t_py:10.2f} {1e3 * t_cy:12.2f} {t_py / t_cy:8.2f}  "
              f"{same(py(*argv), cy(*argv))}")


if __name__ == "__main__":
    main()
