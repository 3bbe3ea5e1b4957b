"""Image quality metrics over float images in [0, 1].

PSNR is 10*log10(1/MSE); an exact match (MSE = 0) is reported as math.inf
and serialized by the reporting layer as the string "exact". SSIM is the
standard single-scale index with an 11x11 Gaussian window (sigma 1.5),
K1=0.01 / K2=0.03 at data range 1.0 (8-bit dynamic range after
normalization), filtered in valid mode and averaged over channels.
"""

import math

import numpy as np
from scipy.signal import convolve2d

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _check_pair(a: np.ndarray, b: np.ndarray):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    for img in (a, b):
        if img.min() < -1e-12 or img.max() > 1 + 1e-12:
            raise ValueError("image values must lie in [0, 1]")
    return a, b


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB; math.inf for exact matches."""
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_kernel(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def _ssim_channel(a: np.ndarray, b: np.ndarray, kernel: np.ndarray) -> float:
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2
    mu_a = convolve2d(a, kernel, mode="valid")
    mu_b = convolve2d(b, kernel, mode="valid")
    mu_aa = mu_a * mu_a
    mu_bb = mu_b * mu_b
    mu_ab = mu_a * mu_b
    var_a = convolve2d(a * a, kernel, mode="valid") - mu_aa
    var_b = convolve2d(b * b, kernel, mode="valid") - mu_bb
    cov = convolve2d(a * b, kernel, mode="valid") - mu_ab
    ssim_map = ((2 * mu_ab + c1) * (2 * cov + c2)) / ((mu_aa + mu_bb + c1) * (var_a + var_b + c2))
    return float(ssim_map.mean())


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean structural similarity, channel-averaged for color images."""
    a, b = _check_pair(a, b)
    if min(a.shape[0], a.shape[1]) < SSIM_WINDOW:
        raise ValueError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW} for SSIM")
    kernel = _gaussian_kernel()
    if a.ndim == 2:
        return _ssim_channel(a, b, kernel)
    if a.ndim == 3:
        return float(np.mean([_ssim_channel(a[..., c], b[..., c], kernel) for c in range(a.shape[2])]))
    raise ValueError(f"expected 2D or 3D image, got shape {a.shape}")
