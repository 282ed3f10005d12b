"""Independent reference implementations used only to check the library.

These paths deliberately share no code with src/paca: the similarity index
is computed with numpy sliding windows in float64 straight from the formula,
reductions use explicit scalar loops, and the Fréchet cross term goes
through scipy's Schur-based matrix square root instead of the library's
symmetric eigendecomposition route.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg
from numpy.lib.stride_tricks import sliding_window_view


def scalar_loop_mean_abs(x: np.ndarray, y: np.ndarray) -> float:
    total = 0.0
    count = 0
    for a, b in zip(x.flatten().tolist(), y.flatten().tolist()):
        total += abs(a - b)
        count += 1
    return total / count


def scalar_loop_rmse(x: np.ndarray, y: np.ndarray) -> float:
    total = 0.0
    count = 0
    for a, b in zip(x.flatten().tolist(), y.flatten().tolist()):
        total += (a - b) ** 2
        count += 1
    return (total / count) ** 0.5


def block_mean_downsample(img: np.ndarray, factor: int) -> np.ndarray:
    """Area-average downsampler for (H, W, C) arrays, H and W divisible."""
    h, w, c = img.shape
    return img.reshape(h // factor, factor, w // factor, factor, c).mean(axis=(1, 3))


def _gauss_window(size: int, sigma: float) -> np.ndarray:
    coords = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(coords**2) / (2 * sigma**2))
    g = g / g.sum()
    return np.outer(g, g)


def _windowed_terms(
    x: np.ndarray, y: np.ndarray, window: int, sigma: float, k1: float, k2: float
) -> tuple[float, float]:
    """(mean luminance*cs, mean cs) over all valid window positions, all channels."""
    w2d = _gauss_window(window, sigma)
    c1 = k1**2
    c2 = k2**2
    # windows: (C, Ho, Wo, window, window)
    wx = sliding_window_view(x, (window, window), axis=(1, 2))
    wy = sliding_window_view(y, (window, window), axis=(1, 2))
    mu_x = (wx * w2d).sum(axis=(-1, -2))
    mu_y = (wy * w2d).sum(axis=(-1, -2))
    ex2 = (wx * wx * w2d).sum(axis=(-1, -2))
    ey2 = (wy * wy * w2d).sum(axis=(-1, -2))
    exy = (wx * wy * w2d).sum(axis=(-1, -2))
    var_x = ex2 - mu_x**2
    var_y = ey2 - mu_y**2
    cov = exy - mu_x * mu_y
    cs = (2 * cov + c2) / (var_x + var_y + c2)
    lum = (2 * mu_x * mu_y + c1) / (mu_x**2 + mu_y**2 + c1)
    return float((lum * cs).mean()), float(cs.mean())


def ms_ssim_reference(
    x: np.ndarray,
    y: np.ndarray,
    scales: int,
    weights: tuple[float, ...],
    window: int = 11,
    sigma: float = 1.5,
    k1: float = 0.01,
    k2: float = 0.03,
) -> float:
    """Direct-formula multi-scale similarity on (C, H, W) arrays in [-1, 1]."""
    u = (np.asarray(x, dtype=np.float64) + 1.0) / 2.0
    v = (np.asarray(y, dtype=np.float64) + 1.0) / 2.0
    total = 1.0
    for level in range(scales):
        ssim_mean, cs_mean = _windowed_terms(u, v, window, sigma, k1, k2)
        term = ssim_mean if level == scales - 1 else cs_mean
        total *= max(term, 0.0) ** weights[level]
        if level < scales - 1:
            c, h, w = u.shape
            u = u.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4))
            v = v.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4))
    return total


def frechet_reference(
    mean_p: np.ndarray,
    cov_p: np.ndarray,
    mean_q: np.ndarray,
    cov_q: np.ndarray,
    ridge: float = 1e-6,
) -> float:
    """Schur-based second path: scipy sqrtm on the plain covariance product."""
    eye = np.eye(mean_p.size)
    sp = cov_p + ridge * eye
    sq = cov_q + ridge * eye
    cross = scipy.linalg.sqrtm(sp @ sq)
    if np.iscomplexobj(cross):
        cross = cross.real
    diff = mean_p - mean_q
    return float(diff @ diff + np.trace(sp) + np.trace(sq) - 2.0 * np.trace(cross))
