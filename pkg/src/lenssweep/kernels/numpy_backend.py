"""NumPy/SciPy implementations of the hot image kernels.

This is the fallback used when the compiled extension is not built, and
it is always importable so the two backends can be benchmarked and
cross-checked against each other.
"""

from __future__ import annotations

import numpy as np
from scipy.signal import fftconvolve

NAME = "numpy"

_PAD_MODE = {"mirror": "symmetric", "zero": "constant"}


def _check_mode(mode: str) -> str:
    if mode not in _PAD_MODE:
        raise ValueError(f"unknown boundary mode {mode!r}")
    return _PAD_MODE[mode]


def convolve2d(image: np.ndarray, kernel: np.ndarray, mode: str = "mirror") -> np.ndarray:
    """Same-size 2-D convolution of an (H, W) or (H, W, C) image.

    Boundary handling is symmetric reflection ("mirror") or zero padding.
    Accumulation is float64; output is float32.
    """
    pad_mode = _check_mode(mode)
    k = np.asarray(kernel, dtype=np.float64)
    if k.ndim != 2 or k.shape[0] % 2 == 0 or k.shape[1] % 2 == 0:
        raise ValueError("kernel must be 2-D with odd side lengths")
    img = np.asarray(image, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[:, :, None]
    ry, rx = k.shape[0] // 2, k.shape[1] // 2
    padded = np.pad(img, ((ry, ry), (rx, rx), (0, 0)), mode=pad_mode)
    out = np.empty(img.shape, dtype=np.float32)
    for c in range(img.shape[2]):
        out[:, :, c] = fftconvolve(padded[:, :, c], k, mode="valid")
    return out[:, :, 0] if squeeze else out


def box_sum(image: np.ndarray, radius: int) -> np.ndarray:
    """Sum over the (2*radius+1)^2 window centered at each pixel.

    Pixels outside the image contribute zero. Returns float64.
    """
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    a = np.asarray(image, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError("box_sum expects a 2-D array")
    if radius == 0:
        return a.copy()
    h, w = a.shape
    # integral image with a zero top row / left column
    s = np.zeros((h + 1, w + 1), dtype=np.float64)
    np.cumsum(a, axis=0, out=s[1:, 1:])
    np.cumsum(s[1:, 1:], axis=1, out=s[1:, 1:])
    ys = np.arange(h)
    xs = np.arange(w)
    y0 = np.clip(ys - radius, 0, h)
    y1 = np.clip(ys + radius + 1, 0, h)
    x0 = np.clip(xs - radius, 0, w)
    x1 = np.clip(xs + radius + 1, 0, w)
    return s[np.ix_(y1, x1)] - s[np.ix_(y0, x1)] - s[np.ix_(y1, x0)] + s[np.ix_(y0, x0)]


def varying_convolve(
    image: np.ndarray,
    kernel_idx: np.ndarray,
    kernels: list[np.ndarray],
    mode: str = "mirror",
) -> np.ndarray:
    """Spatially varying convolution: pixel (y, x) is the convolution of the
    image with kernels[kernel_idx[y, x]] evaluated at that pixel.

    The fallback convolves, per distinct kernel, only the bounding region
    of the pixels using it; planar radius maps give banded regions so the
    total work stays close to one dense pass.
    """
    pad_mode = _check_mode(mode)
    idx = np.asarray(kernel_idx)
    if idx.ndim != 2:
        raise ValueError("kernel_idx must be 2-D")
    img = np.asarray(image, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[:, :, None]
    if img.shape[:2] != idx.shape:
        raise ValueError("image and kernel_idx shapes disagree")
    halfs = []
    for k in kernels:
        k = np.asarray(k)
        if k.ndim != 2 or k.shape[0] != k.shape[1] or k.shape[0] % 2 == 0:
            raise ValueError("kernels must be odd square 2-D arrays")
        halfs.append(k.shape[0] // 2)
    used = np.unique(idx)
    if used.size and (used.min() < 0 or used.max() >= len(kernels)):
        raise ValueError("kernel_idx out of range")
    rmax = max((halfs[j] for j in used), default=0)
    padded = np.pad(img, ((rmax, rmax), (rmax, rmax), (0, 0)), mode=pad_mode)
    out = np.empty(img.shape, dtype=np.float32)
    for j in used:
        mask = idx == j
        r = halfs[j]
        kj = np.asarray(kernels[j], dtype=np.float64)
        rows = np.flatnonzero(mask.any(axis=1))
        cols = np.flatnonzero(mask.any(axis=0))
        y0, y1 = rows[0], rows[-1] + 1
        x0, x1 = cols[0], cols[-1] + 1
        # region in padded coordinates, expanded by this kernel's half-width
        sub = padded[
            y0 - r + rmax : y1 + r + rmax,
            x0 - r + rmax : x1 + r + rmax,
        ]
        m = mask[y0:y1, x0:x1]
        for c in range(img.shape[2]):
            conv = fftconvolve(sub[:, :, c], kj, mode="valid")
            out[y0:y1, x0:x1, c][m] = conv[m]
    return out[:, :, 0] if squeeze else out
