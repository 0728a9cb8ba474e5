"""Image quality metrics for [0, 1] float images.

psnr uses a signal peak of 1 unless told otherwise. ssim follows the
standard single-scale formulation: an 11x11 Gaussian window with sigma
1.5, stability constants
C1 = (0.01 L)^2 and C2 = (0.03 L)^2 with L = 1, statistics taken over
fully valid windows only (no padding), averaged over color channels.
"""

from __future__ import annotations

import numpy as np
from scipy.signal import convolve2d

from .errors import ContractError

_K1 = 0.01
_K2 = 0.03
_WINDOW_SIZE = 11
_WINDOW_SIGMA = 1.5


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim not in (2, 3) or (a.ndim == 3 and a.shape[2] != 3):
        raise ContractError(f"images must be (H, W) or (H, W, 3), got {a.shape}")
    if a.size == 0:
        raise ContractError("images are empty")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ContractError("images must be finite")
    return a, b


def psnr(image: np.ndarray, reference: np.ndarray, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; +inf for identical images."""
    if not peak > 0:
        raise ContractError("peak must be positive")
    a, b = _check_pair(image, reference)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(peak * peak / mse))


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2.0 * sigma ** 2))
    win = np.outer(g, g)
    return win / win.sum()


_WINDOW = _gaussian_window(_WINDOW_SIZE, _WINDOW_SIGMA)


def _ssim_channel(a: np.ndarray, b: np.ndarray) -> float:
    c1 = (_K1 * 1.0) ** 2
    c2 = (_K2 * 1.0) ** 2
    mu_a = convolve2d(a, _WINDOW, mode="valid")
    mu_b = convolve2d(b, _WINDOW, mode="valid")
    mu_aa = mu_a * mu_a
    mu_bb = mu_b * mu_b
    mu_ab = mu_a * mu_b
    var_a = convolve2d(a * a, _WINDOW, mode="valid") - mu_aa
    var_b = convolve2d(b * b, _WINDOW, mode="valid") - mu_bb
    cov = convolve2d(a * b, _WINDOW, mode="valid") - mu_ab
    num = (2.0 * mu_ab + c1) * (2.0 * cov + c2)
    den = (mu_aa + mu_bb + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(image: np.ndarray, reference: np.ndarray) -> float:
    """Mean structural similarity over valid 11x11 windows.

    Images smaller than the window are a contract error. Returns exactly
    1.0 for identical images.
    """
    a, b = _check_pair(image, reference)
    if a.shape[0] < _WINDOW_SIZE or a.shape[1] < _WINDOW_SIZE:
        raise ContractError(
            f"images must be at least {_WINDOW_SIZE}x{_WINDOW_SIZE} for ssim")
    if a.ndim == 2:
        return _ssim_channel(a, b)
    return float(np.mean([_ssim_channel(a[..., c], b[..., c]) for c in range(3)]))
