"""Image-fidelity and depth-accuracy metrics.

PSNR and windowed SSIM for bokeh reconstruction quality; the standard
monocular-depth error suite (AbsRel, SqRel, RMSE, RMSE_log, Log10 and
the delta thresholds), computed in metric units without scale alignment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .raster import RasterImage

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass(frozen=True)
class BokehQualityReport:
    psnr_db: float  # math.inf when the images are identical
    ssim: float
    n_pixels: int


@dataclass(frozen=True)
class DepthAccuracyReport:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    log10: float
    delta1: float
    delta2: float
    delta3: float
    n_valid: int
    n_nonpositive_pred: int


def _as_array(img) -> np.ndarray:
    a = img.samples if isinstance(img, RasterImage) else np.asarray(img)
    return a.astype(np.float64)


def psnr(a, b, peak: float = 1.0) -> float:
    """10*log10(peak^2 / MSE) over all pixels and channels."""
    if not peak > 0:
        raise ValueError("peak must be positive")
    x, y = _as_array(a), _as_array(b)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def _ssim_single(x: np.ndarray, y: np.ndarray, c1: float, c2: float) -> float:
    w = _gaussian_window()
    mu_x = fftconvolve(x, w, mode="valid")
    mu_y = fftconvolve(y, w, mode="valid")
    xx = fftconvolve(x * x, w, mode="valid") - mu_x**2
    yy = fftconvolve(y * y, w, mode="valid") - mu_y**2
    xy = fftconvolve(x * y, w, mode="valid") - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * xy + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (xx + yy + c2)
    return float(np.mean(num / den))


def ssim(a, b, peak: float = 1.0, c1: float | None = None, c2: float | None = None) -> float:
    """Mean SSIM over sliding Gaussian windows (11x11, sigma 1.5).

    Multi-channel inputs score per channel and average. Stabilizers
    default to (K1*peak)^2 and (K2*peak)^2 with the canonical K values.
    """
    x, y = _as_array(a), _as_array(b)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    if x.ndim == 2:
        x, y = x[:, :, None], y[:, :, None]
    if x.shape[0] < SSIM_WINDOW or x.shape[1] < SSIM_WINDOW:
        raise ValueError(f"image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    c1 = (SSIM_K1 * peak) ** 2 if c1 is None else c1
    c2 = (SSIM_K2 * peak) ** 2 if c2 is None else c2
    vals = [_ssim_single(x[:, :, c], y[:, :, c], c1, c2) for c in range(x.shape[2])]
    return float(np.mean(vals))


def bokeh_quality(pred, gt, peak: float = 1.0) -> BokehQualityReport:
    x = _as_array(pred)
    return BokehQualityReport(
        psnr_db=psnr(pred, gt, peak=peak),
        ssim=ssim(pred, gt, peak=peak),
        n_pixels=int(x.shape[0] * x.shape[1]),
    )


def depth_metrics(pred, gt, valid_mask: np.ndarray | None = None) -> DepthAccuracyReport:
    """Depth error suite over valid pixels.

    Ground truth must be positive on valid pixels; nonpositive
    predictions are dropped from the valid set and counted separately.
    """
    d = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if d.shape != g.shape:
        raise ValueError(f"shape mismatch {d.shape} vs {g.shape}")
    if valid_mask is None:
        valid = np.ones(d.shape, dtype=bool)
    else:
        valid = np.asarray(valid_mask, dtype=bool)
        if valid.shape != d.shape:
            raise ValueError("valid_mask shape mismatch")
    if np.any(g[valid] <= 0):
        raise ValueError("ground-truth depth must be positive on valid pixels")
    nonpos = valid & (d <= 0)
    valid = valid & (d > 0)
    n = int(valid.sum())
    if n == 0:
        raise ValueError("no valid pixels to evaluate")
    dp, gp = d[valid], g[valid]
    err = dp - gp
    ratio = np.maximum(dp / gp, gp / dp)
    return DepthAccuracyReport(
        abs_rel=float(np.mean(np.abs(err) / gp)),
        sq_rel=float(np.mean(err**2 / gp)),
        rmse=float(np.sqrt(np.mean(err**2))),
        rmse_log=float(np.sqrt(np.mean((np.log(dp) - np.log(gp)) ** 2))),
        log10=float(np.mean(np.abs(np.log10(dp) - np.log10(gp)))),
        delta1=float(np.mean(ratio < 1.25)),
        delta2=float(np.mean(ratio < 1.25**2)),
        delta3=float(np.mean(ratio < 1.25**3)),
        n_valid=n,
        n_nonpositive_pred=int(nonpos.sum()),
    )
