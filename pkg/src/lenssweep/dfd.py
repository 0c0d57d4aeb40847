"""Depth from a calibrated bokeh sweep.

Per-pixel blur radii are measured against the all-in-focus reference by
grid search over pillbox hypotheses; the origin-constrained least-squares
slope of radius versus strength then gives the per-pixel inverse-depth
offset, with a variance proxy and an explicit sign policy for the
front/behind-focus ambiguity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kernels import box_sum
from .kernels import numpy_backend as _dense
from .raster import LINEAR, RasterImage, luminance, to_linear
from .renderer import BokehStack, pillbox_kernel

# Dense many-radius reference blurs are FFT work; the numpy backend is the
# right algorithm for them on any install, so they bypass backend selection.
_dense_convolve = _dense.convolve2d


@dataclass
class RadiusMeasurement:
    """Per-pixel blur radius fit for one frame against the reference."""

    r_hat: np.ndarray
    fit_residual: np.ndarray
    valid_mask: np.ndarray


@dataclass
class DepthEstimate:
    """Sweep output: absolute inverse-depth offset and friends.

    sign is per-pixel {+1 front-of-focus, -1 behind-focus, 0 unknown};
    depth_m is populated only where a sign policy applied.
    """

    delta_hat: np.ndarray
    variance_proxy: np.ndarray
    sign: np.ndarray
    valid_mask: np.ndarray
    depth_m: np.ndarray | None
    m_frames: int
    sum_k_sq: float
    provenance: dict = field(default_factory=dict)


@dataclass(frozen=True)
class SweepOptions:
    """border_px: frames that are crops of a larger render see content
    beyond the crop that mirror padding cannot reproduce, so a band this
    wide along the frame edge is dropped from the valid set."""

    window_px: int = 21
    grid_step_px: float = 0.25
    r_max_px: float = 32.0
    texture_threshold: float = 1e-4
    border_px: int = 0
    sign_policy: str = "none"  # none | front | behind
    s1_m: float | None = None

    def __post_init__(self):
        if self.window_px < 3 or self.window_px % 2 == 0:
            raise ValueError("window_px must be an odd integer >= 3")
        if not 0 < self.grid_step_px <= 1.0:
            raise ValueError("grid_step_px must lie in (0, 1]")
        if not self.r_max_px > 0:
            raise ValueError("r_max_px must be positive")
        if self.texture_threshold < 0:
            raise ValueError("texture_threshold must be nonnegative")
        if self.border_px < 0:
            raise ValueError("border_px must be nonnegative")
        if self.sign_policy not in ("none", "front", "behind"):
            raise ValueError("sign_policy must be none|front|behind")
        if self.sign_policy != "none" and self.s1_m is None:
            raise ValueError("sign policies front/behind require s1_m")


def radius_grid(step: float, r_max: float) -> np.ndarray:
    return np.arange(0.0, r_max + 0.5 * step, step)


def _texture_valid(ref_luma: np.ndarray, window_px: int, threshold: float) -> np.ndarray:
    """Windowed variance of the reference luma above the threshold."""
    half = window_px // 2
    n = box_sum(np.ones_like(ref_luma, dtype=np.float64), half)
    s1 = box_sum(ref_luma, half)
    s2 = box_sum(ref_luma.astype(np.float64) ** 2, half)
    var = s2 / n - (s1 / n) ** 2
    return var > threshold


def _channels(img: RasterImage) -> list[np.ndarray]:
    rgb = img.rgb()
    return [rgb[:, :, c].astype(np.float32) for c in range(rgb.shape[2])]


def _ssd_update(
    blurred_ref: list[np.ndarray],
    frame_chans: list[np.ndarray],
    half: int,
    radius_value: float,
    best_ssd: np.ndarray,
    best_r: np.ndarray,
) -> None:
    ssd = np.zeros(best_ssd.shape, dtype=np.float64)
    for bc, fc in zip(blurred_ref, frame_chans):
        d = bc.astype(np.float64) - fc
        ssd += box_sum(d * d, half)
    better = ssd < best_ssd  # strict: ties keep the smaller radius
    best_ssd[better] = ssd[better]
    best_r[better] = radius_value


def measure_blur_radius(
    reference: RasterImage,
    frame: RasterImage,
    window_px: int = 21,
    grid_step_px: float = 0.25,
    r_max_px: float = 32.0,
    texture_threshold: float = 1e-4,
) -> RadiusMeasurement:
    """Fit a pillbox radius per pixel by SSD grid search over hypotheses.

    Both images must be linear; the frame is explained as pillbox(r) *
    reference within a window around each pixel. Windows whose reference
    variance falls below the texture threshold carry no defocus signal
    and are marked invalid.
    """
    if (reference.width, reference.height) != (frame.width, frame.height):
        raise ValueError("reference and frame dimensions disagree")
    if reference.colorspace != LINEAR or frame.colorspace != LINEAR:
        raise ValueError("blur measurement expects linear-light images")
    if window_px >= min(reference.width, reference.height):
        raise ValueError("window must be smaller than the image")
    half = window_px // 2
    grid = radius_grid(grid_step_px, r_max_px)
    ref_chans = _channels(reference)
    frame_chans = [c.astype(np.float64) for c in _channels(frame)]
    h, w = reference.height, reference.width
    best_ssd = np.full((h, w), np.inf, dtype=np.float64)
    best_r = np.zeros((h, w), dtype=np.float32)
    for r in grid:
        kern = pillbox_kernel(float(r))
        blurred = [_dense_convolve(c, kern, mode="mirror") for c in ref_chans]
        _ssd_update(blurred, frame_chans, half, float(r), best_ssd, best_r)
    valid = _texture_valid(luminance(reference), window_px, texture_threshold)
    return RadiusMeasurement(
        r_hat=best_r, fit_residual=best_ssd.astype(np.float32), valid_mask=valid
    )


def ols_slope(
    ks, r_hats, valid: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Origin-constrained least-squares slope, sum(K_i * r_i) / sum(K_i^2).

    ks has shape (m,); r_hats has shape (m, ...). With a validity mask
    the sums run over valid frames per pixel; pixels with no valid frame
    come back invalid. Returns (delta_hat, valid_any).
    """
    k = np.asarray(ks, dtype=np.float64)
    if k.ndim != 1 or k.size == 0:
        raise ValueError("ks must be a nonempty 1-D sequence")
    if np.any(k <= 0):
        raise ValueError("strengths must be positive")
    r = np.asarray(r_hats, dtype=np.float64)
    if r.shape[0] != k.size:
        raise ValueError("r_hats must have one leading entry per strength")
    kshape = (k.size,) + (1,) * (r.ndim - 1)
    kb = k.reshape(kshape)
    if valid is None:
        num = np.sum(kb * r, axis=0)
        den = np.sum(kb**2, axis=0) * np.ones_like(num)
        valid_any = np.ones(num.shape, dtype=bool)
    else:
        v = np.asarray(valid, dtype=bool)
        if v.shape != r.shape:
            raise ValueError("valid mask must match r_hats shape")
        num = np.sum(np.where(v, kb * r, 0.0), axis=0)
        den = np.sum(np.where(v, kb**2 * np.ones_like(r), 0.0), axis=0)
        valid_any = v.any(axis=0)
    delta = np.zeros_like(num)
    np.divide(num, den, out=delta, where=den > 0)
    return delta, valid_any


def variance_proxy(ks, per_frame_var, valid: np.ndarray | None = None) -> np.ndarray:
    """sum(K_i^2 * v_i) / sum(K_i^2)^2 with the same masking as ols_slope."""
    k = np.asarray(ks, dtype=np.float64)
    if k.ndim != 1 or k.size == 0:
        raise ValueError("ks must be a nonempty 1-D sequence")
    v = np.asarray(per_frame_var, dtype=np.float64)
    if v.shape[0] != k.size:
        raise ValueError("per_frame_var must have one leading entry per strength")
    kshape = (k.size,) + (1,) * (v.ndim - 1)
    kb = k.reshape(kshape)
    if valid is None:
        num = np.sum(kb**2 * v, axis=0)
        den = np.sum(kb**2, axis=0) * np.ones_like(num)
    else:
        m = np.asarray(valid, dtype=bool)
        num = np.sum(np.where(m, kb**2 * v, 0.0), axis=0)
        den = np.sum(np.where(m, kb**2 * np.ones_like(v), 0.0), axis=0)
    out = np.zeros_like(num)
    np.divide(num, den**2, out=out, where=den > 0)
    return out


def invert_depth(delta_hat, s1_m: float, sign: str):
    """Metric depth from the offset: S2 = 1 / (1/S1 +- delta).

    "front" adds the offset (nearer than the focus plane); "behind"
    subtracts it and requires delta < 1/S1, otherwise the subject would
    sit past infinity.
    """
    if not s1_m > 0:
        raise ValueError("s1_m must be positive")
    if sign not in ("front", "behind"):
        raise ValueError("sign must be 'front' or 'behind'")
    d = np.asarray(delta_hat, dtype=np.float64)
    if np.any(d < 0):
        raise ValueError("delta_hat must be nonnegative (it is an absolute offset)")
    inv_s1 = 1.0 / s1_m
    if sign == "front":
        inv = inv_s1 + d
    else:
        if np.any(d >= inv_s1):
            raise ValueError(
                "behind-focus inversion requires delta_hat < 1/S1; "
                "the estimate is geometrically impossible"
            )
        inv = inv_s1 - d
    out = 1.0 / inv
    return float(out) if np.isscalar(delta_hat) else out


def edge_exclusion_mask(alpha_or_mask: np.ndarray, margin_px: int) -> np.ndarray:
    """True where a window of the given margin straddles a mask boundary.

    The shift-invariant blur model breaks near layer edges; callers drop
    these pixels from the fit.
    """
    m = np.asarray(alpha_or_mask)
    binary = (m > 0.5).astype(np.float64) if m.dtype != bool else m.astype(np.float64)
    frac = box_sum(binary, margin_px) / box_sum(np.ones_like(binary), margin_px)
    return (frac > 0.0) & (frac < 1.0)


def sweep_depth(
    stack: BokehStack,
    options: SweepOptions = SweepOptions(),
    exclude_mask: np.ndarray | None = None,
) -> DepthEstimate:
    """Run the full sweep: per-frame radius fits, the origin-constrained
    slope, the variance proxy, and (optionally) metric inversion.

    The grid of blurred references is shared across frames: each grid
    radius blurs the reference once and scores every frame against it.
    """
    if not stack.frames:
        raise ValueError("stack has no frames")
    gamma = float(stack.provenance.get("gamma", 2.2))
    reference = to_linear(stack.reference, gamma)
    frames = [(k, to_linear(img, gamma)) for k, img in stack.frames]
    h, w = reference.height, reference.width
    if options.window_px >= min(h, w):
        raise ValueError("window must be smaller than the image")
    half = options.window_px // 2
    grid = radius_grid(options.grid_step_px, options.r_max_px)

    ref_chans = _channels(reference)
    frame_chans = [[c.astype(np.float64) for c in _channels(img)] for _, img in frames]
    m = len(frames)
    best_ssd = [np.full((h, w), np.inf, dtype=np.float64) for _ in range(m)]
    best_r = [np.zeros((h, w), dtype=np.float32) for _ in range(m)]
    for r in grid:
        kern = pillbox_kernel(float(r))
        blurred = [_dense_convolve(c, kern, mode="mirror") for c in ref_chans]
        for i in range(m):
            _ssd_update(blurred, frame_chans[i], half, float(r), best_ssd[i], best_r[i])

    texture_ok = _texture_valid(luminance(reference), options.window_px, options.texture_threshold)
    valid = texture_ok.copy()
    if options.border_px > 0:
        b = options.border_px
        border = np.ones((h, w), dtype=bool)
        if h > 2 * b and w > 2 * b:
            border[b : h - b, b : w - b] = False
        valid &= ~border
    if exclude_mask is not None:
        if exclude_mask.shape != (h, w):
            raise ValueError("exclude_mask shape must match the stack")
        valid &= ~exclude_mask

    ks = np.array([k for k, _ in frames], dtype=np.float64)
    r_stack = np.stack(best_r, axis=0)
    frame_valid = np.broadcast_to(valid, (m, h, w))
    delta, valid_any = ols_slope(ks, r_stack, valid=frame_valid)
    n_win = float(options.window_px**2 * len(ref_chans))
    mse_stack = np.stack([s / n_win for s in best_ssd], axis=0)
    var = variance_proxy(ks, mse_stack, valid=frame_valid)

    sign = np.zeros((h, w), dtype=np.int8)
    depth = None
    if options.sign_policy in ("front", "behind"):
        sign[valid_any] = 1 if options.sign_policy == "front" else -1
        depth = np.zeros((h, w), dtype=np.float64)
        safe = valid_any.copy()
        inv_s1 = 1.0 / options.s1_m
        if options.sign_policy == "behind":
            safe &= delta < inv_s1
        vals = invert_depth(
            np.where(safe, delta, 0.0), options.s1_m, options.sign_policy
        )
        depth = np.where(safe, vals, 0.0)
        sign[valid_any & ~safe] = 0

    provenance = {
        "ks": [float(k) for k in ks],
        "window_px": options.window_px,
        "grid_step_px": options.grid_step_px,
        "r_max_px": options.r_max_px,
        "texture_threshold": options.texture_threshold,
        "border_px": options.border_px,
        "sign_policy": options.sign_policy,
        "s1_m": options.s1_m,
        "gamma": gamma,
    }
    return DepthEstimate(
        delta_hat=delta.astype(np.float32),
        variance_proxy=var.astype(np.float32),
        sign=sign,
        valid_mask=valid_any & valid,
        depth_m=depth,
        m_frames=m,
        sum_k_sq=float(np.sum(ks**2)),
        provenance=provenance,
    )


def disparity_from_delta(
    delta_hat: np.ndarray,
    focus_disparity: float,
    sign_map: np.ndarray,
    defocus_scale: float = 1.0,
) -> np.ndarray:
    """Disparity-space reconstruction d = d_f + sign * s * delta.

    sign_map holds {+1, -1} per pixel (0 leaves the pixel at d_f). Used
    when strengths are expressed per normalized-disparity unit, where the
    slope estimates |d - d_f| / s.
    """
    return focus_disparity + np.sign(sign_map) * defocus_scale * np.asarray(delta_hat)
