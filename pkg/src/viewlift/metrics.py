"""Image and pose metrics: PSNR, Gaussian-window SSIM, pose MSE, and
cross-view feature consistency."""

from __future__ import annotations

import numpy as np
from scipy.ndimage import convolve

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def psnr(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB, capped at 99 for identical inputs."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse <= 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(data_range**2 / mse))


def gaussian_kernel(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    half = size // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    k = np.outer(g, g)
    return k / k.sum()


def _local_mean(x: np.ndarray, kernel: np.ndarray, norm: np.ndarray) -> np.ndarray:
    return convolve(x, kernel, mode="constant", cval=0.0) / norm


def ssim(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> float:
    """Structural similarity with an 11x11 Gaussian window (sigma 1.5).

    Windows are renormalized where they overhang the image border, so images
    smaller than the window are handled without special cases. Multi-channel
    inputs are averaged over channels.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[..., None]
        b = b[..., None]
    kernel = gaussian_kernel()
    norm = convolve(np.ones(a.shape[:2]), kernel, mode="constant", cval=0.0)
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    values = []
    for ch in range(a.shape[2]):
        x, y = a[..., ch], b[..., ch]
        mx = _local_mean(x, kernel, norm)
        my = _local_mean(y, kernel, norm)
        mxx = _local_mean(x * x, kernel, norm)
        myy = _local_mean(y * y, kernel, norm)
        mxy = _local_mean(x * y, kernel, norm)
        vx = mxx - mx**2
        vy = myy - my**2
        cxy = mxy - mx * my
        s = ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx**2 + my**2 + c1) * (vx + vy + c2))
        values.append(s.mean())
    return float(np.mean(values))


def pose_mse(pred: np.ndarray, real: np.ndarray) -> float:
    """Mean squared error over the 25 camera-vector components."""
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    real = np.asarray(real, dtype=np.float64).reshape(-1)
    if pred.shape != real.shape:
        raise ValueError("pose vectors must have matching length")
    return float(np.mean((pred - real) ** 2))


def feature_consistency(features: list[np.ndarray]) -> float:
    """Mean pairwise cosine similarity between flattened per-view features."""
    if len(features) < 2:
        raise ValueError("need at least two views")
    flats = [np.asarray(f, dtype=np.float64).reshape(-1) for f in features]
    sims = []
    for i in range(len(flats)):
        for j in range(i + 1, len(flats)):
            a, b = flats[i], flats[j]
            denom = np.linalg.norm(a) * np.linalg.norm(b)
            sims.append(float(a @ b / denom) if denom > 1e-12 else 0.0)
    return float(np.mean(sims))
