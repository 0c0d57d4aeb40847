"""In-memory raster containers shared across the pipeline.

Images are float32 arrays of shape (H, W, C) with C in {1, 3, 4} and a
colorspace tag. Linear <-> display-gamma conversion lives here and is
always explicit; file I/O never converts behind the caller's back.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LINEAR = "linear"
DISPLAY_GAMMA = "display-gamma"

# Values this far outside [0, 1] are treated as float fuzz and snapped.
_RANGE_SLACK = 1e-4

# Rec. 709 luma weights, applied in linear light.
_LUMA = np.array([0.2126, 0.7152, 0.0722], dtype=np.float64)


@dataclass
class RasterImage:
    samples: np.ndarray
    colorspace: str = LINEAR

    def __post_init__(self):
        a = np.asarray(self.samples)
        if a.ndim == 2:
            a = a[:, :, None]
        if a.ndim != 3 or a.shape[2] not in (1, 3, 4):
            raise ValueError(f"samples must be (H, W, C) with C in 1/3/4, got {a.shape}")
        if a.shape[0] < 1 or a.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        if self.colorspace not in (LINEAR, DISPLAY_GAMMA):
            raise ValueError(f"unknown colorspace tag {self.colorspace!r}")
        a = a.astype(np.float32, copy=False)
        if not np.all(np.isfinite(a)):
            raise ValueError("samples contain non-finite values")
        lo, hi = float(a.min()), float(a.max())
        if lo < -_RANGE_SLACK or hi > 1.0 + _RANGE_SLACK:
            raise ValueError(f"samples outside [0, 1]: min={lo}, max={hi}")
        if lo < 0.0 or hi > 1.0:
            a = np.clip(a, 0.0, 1.0)
        self.samples = a

    @property
    def height(self) -> int:
        return self.samples.shape[0]

    @property
    def width(self) -> int:
        return self.samples.shape[1]

    @property
    def channels(self) -> int:
        return self.samples.shape[2]

    def rgb(self) -> np.ndarray:
        """Color planes without alpha, shape (H, W, 3) or (H, W, 1)."""
        if self.channels == 4:
            return self.samples[:, :, :3]
        return self.samples

    def alpha(self) -> np.ndarray | None:
        return self.samples[:, :, 3] if self.channels == 4 else None


@dataclass
class DisparityMap:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim != 2:
            raise ValueError(f"disparity map must be 2-D, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("disparity map contains non-finite values")
        if v.min() < 0:
            raise ValueError("disparity values must be nonnegative")
        self.values = v

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def encode_gamma(linear: np.ndarray, gamma: float = 2.2) -> np.ndarray:
    """Linear [0,1] -> display with exponent 1/gamma (float64 internally)."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    out = np.power(np.clip(linear.astype(np.float64), 0.0, 1.0), 1.0 / gamma)
    return out.astype(np.float32)


def decode_gamma(display: np.ndarray, gamma: float = 2.2) -> np.ndarray:
    """Display [0,1] -> linear with exponent gamma."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    out = np.power(np.clip(display.astype(np.float64), 0.0, 1.0), gamma)
    return out.astype(np.float32)


def to_display(img: RasterImage, gamma: float = 2.2) -> RasterImage:
    """Gamma-encode the color planes; alpha passes through untouched."""
    if img.colorspace == DISPLAY_GAMMA:
        return img
    s = img.samples.copy()
    ncol = 3 if img.channels == 4 else img.channels
    s[:, :, :ncol] = encode_gamma(img.samples[:, :, :ncol], gamma)
    return RasterImage(s, colorspace=DISPLAY_GAMMA)


def to_linear(img: RasterImage, gamma: float = 2.2) -> RasterImage:
    if img.colorspace == LINEAR:
        return img
    s = img.samples.copy()
    ncol = 3 if img.channels == 4 else img.channels
    s[:, :, :ncol] = decode_gamma(img.samples[:, :, :ncol], gamma)
    return RasterImage(s, colorspace=LINEAR)


def luminance(img: RasterImage | np.ndarray) -> np.ndarray:
    """Rec. 709 luma of the color planes, shape (H, W) float32."""
    a = img.samples if isinstance(img, RasterImage) else np.asarray(img)
    if a.ndim == 2:
        return a.astype(np.float32)
    if a.shape[2] == 1:
        return a[:, :, 0].astype(np.float32)
    return (a[:, :, :3].astype(np.float64) @ _LUMA).astype(np.float32)


def center_crop(a: np.ndarray, crop_wh: tuple[int, int]) -> np.ndarray:
    """Centered crop of an (H, W, ...) array to (crop_h, crop_w)."""
    cw, ch = crop_wh
    h, w = a.shape[0], a.shape[1]
    if ch > h or cw > w:
        raise ValueError(f"crop {cw}x{ch} exceeds raster {w}x{h}")
    y0 = (h - ch) // 2
    x0 = (w - cw) // 2
    return a[y0 : y0 + ch, x0 : x0 + cw]
