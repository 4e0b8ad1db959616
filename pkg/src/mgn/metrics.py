"""Image quality metrics on numpy arrays (channel-first or single-channel).

All accumulation is in float64.  Inputs are expected in [0, max_val]; the
caller clamps model output before measuring.
"""

import numpy as np

PSNR_CAP_DB = 100.0
_WINDOW = 11
_SIGMA = 1.5


def psnr(a: np.ndarray, b: np.ndarray, max_val: float = 1.0) -> float:
    """10 log10(max_val^2 / MSE), capped at 100 dB; identical inputs hit the cap."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    diff = a.astype(np.float64) - b.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * np.log10(max_val * max_val / mse))


def _gaussian_kernel():
    half = (_WINDOW - 1) / 2.0
    x = np.arange(_WINDOW, dtype=np.float64) - half
    g = np.exp(-(x * x) / (2.0 * _SIGMA * _SIGMA))
    k = np.outer(g, g)
    return k / k.sum()


def _filter_valid(img: np.ndarray, kern: np.ndarray) -> np.ndarray:
    win = np.lib.stride_tricks.sliding_window_view(img, kern.shape)
    return np.tensordot(win, kern, axes=([2, 3], [0, 1]))


def ssim(a: np.ndarray, b: np.ndarray, max_val: float = 1.0) -> float:
    """Single-scale SSIM, 11x11 Gaussian window (sigma 1.5), valid windows only,
    averaged over channels.  C1 = (0.01 max_val)^2, C2 = (0.03 max_val)^2."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[None]
        b = b[None]
    if a.ndim != 3:
        raise ValueError(f"expected [H,W] or [C,H,W], got rank {a.ndim}")
    if a.shape[-2] < _WINDOW or a.shape[-1] < _WINDOW:
        raise ValueError(f"images must be at least {_WINDOW}x{_WINDOW}")
    c1 = (0.01 * max_val) ** 2
    c2 = (0.03 * max_val) ** 2
    kern = _gaussian_kernel()
    vals = []
    for ch in range(a.shape[0]):
        x = a[ch].astype(np.float64)
        y = b[ch].astype(np.float64)
        mu_x = _filter_valid(x, kern)
        mu_y = _filter_valid(y, kern)
        var_x = _filter_valid(x * x, kern) - mu_x * mu_x
        var_y = _filter_valid(y * y, kern) - mu_y * mu_y
        cov = _filter_valid(x * y, kern) - mu_x * mu_y
        num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
        den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


def l2_error_map(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-pixel Euclidean error across channels, scaled so the max is 1
    (left as-is when the images are identical)."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    diff = a.astype(np.float64) - b.astype(np.float64)
    if diff.ndim == 2:
        err = np.abs(diff)
    else:
        err = np.sqrt(np.sum(diff * diff, axis=0))
    peak = err.max()
    return err / peak if peak > 0 else err
