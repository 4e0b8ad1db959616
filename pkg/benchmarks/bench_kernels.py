"""Compare the compiled and pure-Python convolution kernels.

Times im2col / col2im on shapes the network actually runs (default channel
widths at a 64-pixel crop), verifies both backends agree bitwise, and
optionally times a whole forward+backward step per backend in subprocesses.

    python3 benchmarks/bench_kernels.py             # kernel table
    python3 benchmarks/bench_kernels.py --forward   # plus end-to-end step
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from mgn import _convops_py  # noqa: E402
from mgn.rng import Rng  # noqa: E402

# (label, n, c, side, k, stride) — stages of the default model on a 64 crop
SHAPES = [
    ("stem   8x3x64x64 k3", 8, 3, 64, 3, 1),
    ("stage1 8x13x64x64 k3", 8, 13, 64, 3, 1),
    ("down1  8x26x32x32 k3", 8, 26, 32, 3, 1),
    ("down2  8x52x16x16 k3", 8, 52, 16, 3, 1),
    ("fuse   8x26x32x32 k1", 8, 26, 32, 1, 1),
]


def _time(fn, min_wall=0.25):
    """Median of repeated timings; repeats until ``min_wall`` seconds spent."""
    times = []
    spent = 0.0
    while spent < min_wall or len(times) < 3:
        t0 = time.perf_counter()
        fn()
        dt = time.perf_counter() - t0
        times.append(dt)
        spent += dt
    return sorted(times)[len(times) // 2]


def bench_kernels(ext) -> None:
    rng = Rng(0).child("bench")
    print(f"{'shape':<22} {'op':<7} {'python':>10} {'cython':>10} {'speedup':>8}")
    for label, n, c, side, k, stride in SHAPES:
        xp = rng.normal((n, c, side + k - 1, side + k - 1)).astype(np.float32)
        xp = np.ascontiguousarray(xp)
        oh = (xp.shape[2] - k) // stride + 1
        cols_py = np.empty((n, c * k * k, oh * oh), dtype=np.float32)
        cols_cy = np.empty_like(cols_py)

        _convops_py.im2col(xp, k, stride, cols_py)
        ext.im2col(xp, k, stride, cols_cy)
        if not np.array_equal(cols_py, cols_cy):
            raise SystemExit(f"im2col backends disagree on {label}")

        t_py = _time(lambda: _convops_py.im2col(xp, k, stride, cols_py))
        t_cy = _time(lambda: ext.im2col(xp, k, stride, cols_cy))
        print(f"{label:<22} {'im2col':<7} {t_py * 1e3:>9.2f}ms {t_cy * 1e3:>9.2f}ms "
              f"{t_py / t_cy:>7.1f}x")

        img_py = np.zeros_like(xp)
        img_cy = np.zeros_like(xp)
        _convops_py.col2im(cols_py, img_py, k, stride)
        ext.col2im(cols_py, img_cy, k, stride)
        if not np.array_equal(img_py, img_cy):
            raise SystemExit(f"col2im backends disagree on {label}")

        def run_py():
            img_py[:] = 0.0
            _convops_py.col2im(cols_py, img_py, k, stride)

        def run_cy():
            img_cy[:] = 0.0
            ext.col2im(cols_py, img_cy, k, stride)

        t_py = _time(run_py)
        t_cy = _time(run_cy)
        print(f"{label:<22} {'col2im':<7} {t_py * 1e3:>9.2f}ms {t_cy * 1e3:>9.2f}ms "
              f"{t_py / t_cy:>7.1f}x")


_STEP_SNIPPET = """
import sys, time
sys.path.insert(0, {src!r})
import numpy as np
from mgn import kernels
from mgn.config import LossWeights
from mgn.model import ModelConfig, build_model
from mgn.rng import Rng
from mgn.tensor import Tensor
from mgn.train import total_loss

model = build_model(ModelConfig(), 0)
rng = Rng(0).child("bench-step")
x = Tensor(rng.uniform((2, 3, 64, 64), 0.0, 0.6))
t = Tensor(rng.uniform((2, 3, 64, 64), 0.2, 1.0))
w = LossWeights()

def step():
    for p in model.parameters():
        p.grad = None
    loss, _ = total_loss(model.forward(x), t, w, aux=True)
    loss.backward()

step()  # warm up
times = []
for _ in range(5):
    t0 = time.perf_counter()
    step()
    times.append(time.perf_counter() - t0)
print(f"{{kernels.backend_name()}} {{sorted(times)[2]:.4f}}")
"""


def bench_forward() -> None:
    src = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "src")
    print("\nfull forward+backward, batch 2 at 64x64, median of 5:")
    results = {}
    for backend in ("python", "cython"):
        env = dict(os.environ, MGN_KERNELS=backend)
        out = subprocess.run(
            [sys.executable, "-c", _STEP_SNIPPET.format(src=src)],
            env=env, capture_output=True, text=True, check=True,
        ).stdout.split()
        results[out[0]] = float(out[1])
        print(f"  {out[0]:<7} {float(out[1]) * 1e3:8.1f}ms")
    print(f"  speedup {results['python'] / results['cython']:.2f}x")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--forward", action="store_true",
                        help="also time a training step per backend")
    args = parser.parse_args()

    try:
        from mgn import _convops as ext
    except ImportError:
        raise SystemExit("compiled extension not built; run pip install -e .")

    bench_kernels(ext)
    if args.forward:
        bench_forward()


if __name__ == "__main__":
    main()
