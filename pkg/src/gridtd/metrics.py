"""Image quality metrics."""
from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import InvalidArgument

SSIM_SIGMA = 1.5
SSIM_RADIUS = 5  # 11x11 window


def psnr(x, ref, peak: float = 1.0) -> float:
    x = np.asarray(x, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if x.shape != ref.shape:
        raise InvalidArgument(f"shape mismatch {x.shape} vs {ref.shape}")
    if not peak > 0:
        raise InvalidArgument("peak must be positive")
    mse = float(np.mean((x - ref) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(peak * peak / mse)


def _ssim_2d(x: np.ndarray, y: np.ndarray, peak: float) -> float:
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2

    def blur(a):
        return gaussian_filter(a, SSIM_SIGMA, mode="reflect", truncate=SSIM_RADIUS / SSIM_SIGMA)

    ux, uy = blur(x), blur(y)
    vx = blur(x * x) - ux * ux
    vy = blur(y * y) - uy * uy
    vxy = blur(x * y) - ux * uy
    s = ((2 * ux * uy + c1) * (2 * vxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
    pad = SSIM_RADIUS if min(x.shape) > 2 * SSIM_RADIUS else 0
    if pad:
        s = s[pad:-pad, pad:-pad]
    return float(s.mean())


def ssim(x, ref, peak: float = 1.0) -> float:
    """Gaussian-window SSIM; 3-D inputs are averaged over the last axis."""
    x = np.asarray(x, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if x.shape != ref.shape:
        raise InvalidArgument(f"shape mismatch {x.shape} vs {ref.shape}")
    if not peak > 0:
        raise InvalidArgument("peak must be positive")
    if x.ndim == 2:
        return _ssim_2d(x, ref, peak)
    if x.ndim == 3:
        return float(np.mean([_ssim_2d(x[:, :, t], ref[:, :, t], peak) for t in range(x.shape[2])]))
    raise InvalidArgument("ssim expects 2-D images or 3-D frame stacks")
