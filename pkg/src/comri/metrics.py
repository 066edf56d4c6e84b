"""Image quality metrics computed on real magnitude images."""

from __future__ import annotations

import math

import numpy as np
from scipy.signal import convolve2d

from .errors import ContractError, InvalidInputError

__all__ = ["psnr", "ssim", "gaussian_window"]


def _check_pair(ref: np.ndarray, test: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ref = np.asarray(ref, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    if ref.shape != test.shape:
        raise ContractError(f"shape mismatch: {ref.shape} vs {test.shape}")
    if not (np.isfinite(ref).all() and np.isfinite(test).all()):
        raise InvalidInputError("metrics require finite inputs")
    return ref, test


def psnr(ref: np.ndarray, test: np.ndarray, data_range: float | None = None) -> float:
    """Peak signal-to-noise ratio in dB, ``20 log10(peak / rmse)``.

    The peak is the maximum of the reference unless ``data_range`` is given.
    Identical images return ``inf``.
    """
    ref, test = _check_pair(ref, test)
    peak = float(ref.max()) if data_range is None else float(data_range)
    if peak <= 0:
        raise InvalidInputError("reference has no positive peak")
    mse = float(np.mean((ref - test) ** 2))
    if mse == 0.0:
        return math.inf
    return 20.0 * math.log10(peak / math.sqrt(mse))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    """Normalized 2-D Gaussian weighting window."""
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    win = np.outer(g, g)
    return win / win.sum()


def ssim(
    ref: np.ndarray,
    test: np.ndarray,
    data_range: float | None = None,
    win_size: int = 11,
    sigma: float = 1.5,
    k1: float = 0.01,
    k2: float = 0.03,
) -> float:
    """Mean structural similarity over sliding Gaussian windows.

    Local statistics are Gaussian-weighted (``win_size`` x ``win_size``,
    std ``sigma``) and only fully valid windows contribute. The dynamic
    range defaults to the reference maximum; pass ``data_range`` to share
    one range across comparisons (this also makes the metric symmetric in
    its arguments).
    """
    ref, test = _check_pair(ref, test)
    H, W = ref.shape[-2], ref.shape[-1]
    if ref.ndim != 2:
        raise ContractError(f"ssim expects 2-D images, got shape {ref.shape}")
    if H < win_size or W < win_size:
        raise InvalidInputError(
            f"image {H}x{W} smaller than the {win_size}x{win_size} window"
        )
    L = float(ref.max()) if data_range is None else float(data_range)
    if L <= 0:
        raise InvalidInputError("dynamic range must be positive")
    c1 = (k1 * L) ** 2
    c2 = (k2 * L) ** 2
    win = gaussian_window(win_size, sigma)

    def local(im: np.ndarray) -> np.ndarray:
        return convolve2d(im, win, mode="valid")

    mu_r = local(ref)
    mu_t = local(test)
    var_r = local(ref * ref) - mu_r * mu_r
    var_t = local(test * test) - mu_t * mu_t
    cov = local(ref * test) - mu_r * mu_t

    num = (2.0 * mu_r * mu_t + c1) * (2.0 * cov + c2)
    den = (mu_r * mu_r + mu_t * mu_t + c1) * (var_r + var_t + c2)
    return float(np.mean(num / den))
