"""Image quality metrics: SSIM, PSNR, SNR.

Definitions are the standard ones; conventions fixed here:

* SSIM uses an 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03,
  dynamic range ``max(ref) - min(ref)``, and symmetric boundary handling;
* PSNR is ``10 log10(max(ref)^2 / MSE)``;
* SNR is ``10 log10(||ref||^2 / ||x - ref||^2)``.

The metric functions operate on the values they are given. The experiment
pipeline min-max normalizes both images to [0, 1] (see :func:`minmax`) before
computing metrics, so reported numbers are invariant to reconstruction scale.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.ndimage import correlate1d

from .geometry import Image


def _values(a: Image | np.ndarray) -> np.ndarray:
    return a.values if isinstance(a, Image) else np.asarray(a, dtype=np.float64)


def _check_pair(x, ref) -> tuple[np.ndarray, np.ndarray]:
    xv, rv = _values(x), _values(ref)
    if isinstance(x, Image) and isinstance(ref, Image) and x.grid != ref.grid:
        raise ValueError("images live on different grids")
    if xv.shape != rv.shape:
        raise ValueError(f"shape mismatch: {xv.shape} vs {rv.shape}")
    return xv, rv


def minmax(x: Image) -> Image:
    """Min-max normalize to [0, 1]; a constant image maps to all zeros."""
    v = x.values
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        return Image(grid=x.grid, values=np.zeros_like(v))
    return Image(grid=x.grid, values=(v - lo) / (hi - lo))


def _gaussian_taps(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2.0 * sigma**2))
    return g / g.sum()


def _local_mean(a: np.ndarray, taps: np.ndarray) -> np.ndarray:
    # 'reflect' in scipy.ndimage is symmetric padding (edge sample repeated)
    out = correlate1d(a, taps, axis=0, mode="reflect")
    return correlate1d(out, taps, axis=1, mode="reflect")


def ssim(
    x: Image | np.ndarray,
    ref: Image | np.ndarray,
    window_size: int = 11,
    sigma: float = 1.5,
    k1: float = 0.01,
    k2: float = 0.03,
    dyn_range: float | None = None,
) -> float:
    """Mean local SSIM of x against the reference.

    The dynamic range defaults to ``max(ref) - min(ref)``; apart from that
    convention the statistic is symmetric in its two arguments, which can be
    checked by passing ``dyn_range`` explicitly.
    """
    xv, rv = _check_pair(x, ref)
    dyn = float(rv.max() - rv.min()) if dyn_range is None else float(dyn_range)
    if dyn == 0.0:
        raise ValueError("SSIM undefined for a constant reference image")
    c1 = (k1 * dyn) ** 2
    c2 = (k2 * dyn) ** 2
    taps = _gaussian_taps(window_size, sigma)

    mu_x = _local_mean(xv, taps)
    mu_r = _local_mean(rv, taps)
    var_x = _local_mean(xv * xv, taps) - mu_x * mu_x
    var_r = _local_mean(rv * rv, taps) - mu_r * mu_r
    cov = _local_mean(xv * rv, taps) - mu_x * mu_r

    num = (2.0 * mu_x * mu_r + c1) * (2.0 * cov + c2)
    den = (mu_x * mu_x + mu_r * mu_r + c1) * (var_x + var_r + c2)
    return float(np.mean(num / den))


def psnr(x: Image | np.ndarray, ref: Image | np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB; identical images give +inf."""
    xv, rv = _check_pair(x, ref)
    mse = float(np.mean((xv - rv) ** 2))
    if mse == 0.0:
        return math.inf
    peak = float(rv.max())
    return 10.0 * math.log10(peak**2 / mse)


def snr(x: Image | np.ndarray, ref: Image | np.ndarray) -> float:
    """Energy signal-to-noise ratio in dB; identical images give +inf."""
    xv, rv = _check_pair(x, ref)
    sig = float(np.sum(rv**2))
    if sig == 0.0:
        raise ValueError("SNR undefined for an all-zero reference image")
    err = float(np.sum((xv - rv) ** 2))
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(sig / err)
