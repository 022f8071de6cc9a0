"""Image-quality metrics: RMSE, PSNR and SSIM."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
PSNR_CAP = 999.0


@dataclass(frozen=True)
class MetricsReport:
    rmse: float
    psnr: float
    ssim: float

    def as_dict(self) -> dict:
        """Serializable form; an infinite PSNR is capped."""
        return {"rmse": self.rmse, "psnr": min(self.psnr, PSNR_CAP), "ssim": self.ssim}


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r**2) / (2 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def rmse(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def psnr(recon, truth, max_value: float = 1.0) -> float:
    """``20 log10(MAX / RMSE)``; ``inf`` for identical inputs."""
    e = rmse(recon, truth)
    if e == 0:
        return math.inf
    return 20.0 * math.log10(max_value / e)


def ssim(a, b, data_range: float = 1.0, window: np.ndarray | None = None) -> float:
    """Mean SSIM over all fully contained Gaussian windows.

    ``c1 = (0.01 L)^2`` and ``c2 = (0.03 L)^2`` with ``L = data_range``. The
    expression is symmetric in ``a`` and ``b``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if window is None:
        window = gaussian_window()
    k = window.shape[0]
    if min(a.shape) < k:
        raise ValueError(f"images must be at least {k}x{k} for SSIM")
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2

    def filt(x):
        return np.tensordot(sliding_window_view(x, (k, k)), window, axes=([2, 3], [0, 1]))

    mu_a, mu_b = filt(a), filt(b)
    saa = filt(a * a) - mu_a**2
    sbb = filt(b * b) - mu_b**2
    sab = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (saa + sbb + c2)
    return float(np.mean(num / den))


def compute_metrics(recon, truth, mode: str = "image", data_range: float | None = None) -> MetricsReport:
    """RMSE, PSNR and SSIM of ``recon`` against ``truth``.

    ``mode="image"`` expects both inputs normalised to [0, 1] and uses a peak
    value and dynamic range of 1. ``mode="speed"`` works in m/s with the
    dynamic range of ``truth`` unless ``data_range`` is given.
    """
    recon = np.asarray(recon, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if recon.shape != truth.shape:
        raise ValueError(f"shape mismatch: recon {recon.shape} vs truth {truth.shape}")
    if mode == "image":
        rng = 1.0 if data_range is None else data_range
    elif mode == "speed":
        rng = data_range if data_range is not None else float(truth.max() - truth.min())
        if rng <= 0:
            raise ValueError("speed-mode metrics need a positive data_range for a constant truth")
    else:
        raise ValueError(f"mode must be 'image' or 'speed', got {mode!r}")
    return MetricsReport(rmse(recon, truth), psnr(recon, truth, rng), ssim(recon, truth, rng))
