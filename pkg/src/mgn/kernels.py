"""Backend selection for the convolution gather/scatter kernels.

The compiled extension is preferred when it imports; set MGN_KERNELS to
"cython" or "python" to force a backend (forcing "cython" without the built
extension raises).  Both backends produce bitwise-identical results; see
benchmarks/bench_kernels.py for the speed comparison.
"""

import os

import numpy as np

from . import _convops_py

_FORCED = os.environ.get("MGN_KERNELS", "auto").lower()
if _FORCED not in ("auto", "cython", "python"):
    raise ValueError(f"MGN_KERNELS must be auto, cython or python, got {_FORCED!r}")

_impl = _convops_py
_name = "python"
if _FORCED in ("auto", "cython"):
    try:
        from . import _convops as _ext

        _impl = _ext
        _name = "cython"
    except ImportError:
        if _FORCED == "cython":
            raise


def backend_name() -> str:
    return _name


def _check(xp_dtype, k, stride):
    if xp_dtype not in (np.float32, np.float64):
        raise TypeError(f"kernels require float32/float64, got {xp_dtype}")
    if k < 1 or stride < 1:
        raise ValueError("kernel size and stride must be >= 1")


def im2col(xp: np.ndarray, k: int, stride: int) -> np.ndarray:
    """Patches of ``xp`` [N,C,Hp,Wp] as columns [N, C*k*k, OH*OW].

    Row index runs over (channel, ky, kx) in C order, i.e. exactly the
    order of a flattened [C_out, C_in, k, k] weight, so a convolution is a
    single matmul against the column matrix.
    """
    _check(xp.dtype.type, k, stride)
    n, c, hp, wp = xp.shape
    if hp < k or wp < k:
        raise ValueError(f"window {k} exceeds padded input {hp}x{wp}")
    oh = (hp - k) // stride + 1
    ow = (wp - k) // stride + 1
    xp = np.ascontiguousarray(xp)
    cols = np.empty((n, c * k * k, oh * ow), dtype=xp.dtype)
    _impl.im2col(xp, k, stride, cols)
    return cols


def col2im(cols: np.ndarray, n: int, c: int, hp: int, wp: int, k: int, stride: int) -> np.ndarray:
    """Adjoint of im2col: scatter-add columns back to an [N,C,Hp,Wp] image."""
    _check(cols.dtype.type, k, stride)
    xp = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    _impl.col2im(np.ascontiguousarray(cols), xp, k, stride)
    return xp
