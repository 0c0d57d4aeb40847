"""Occlusion-aware layered bokeh rendering.

Each layer is blurred with a pillbox PSF whose radius follows its
disparity offset from the focus plane, r = k * |d - d_f| / s, then the
foreground is alpha-over composited onto the blurred background and the
result is gamma-encoded for display.

Radii are quantized to a fine grid (a "taps" quality knob; step = 1/taps
pixels) so each quantization level maps to one precomputed kernel; the
per-pixel gather then runs through the compiled kernel backend.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import kernels
from .raster import DISPLAY_GAMMA, LINEAR, RasterImage, center_crop, encode_gamma
from .scene import LayeredScene, composite_scene


@dataclass(frozen=True)
class RenderParams:
    """Lens-side knobs for one render.

    k: bokeh strength, pixels of blur radius per normalized-disparity unit.
    focus_disparity: d_f in [0, 1].
    defocus_scale: the fixed divisor s applied to the disparity offset.
    quality_taps: radius quantization levels per pixel of radius; the
        resulting tile step 1/taps must stay at or below 0.25 px.
    max_radius_px: renders requesting a larger radius are rejected rather
        than clamped, since silent clamping would bend the linear law.
    """

    k: float
    focus_disparity: float
    defocus_scale: float = 1.0
    gamma: float = 2.2
    quality_taps: int = 8
    max_radius_px: float = 64.0

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("k must be nonnegative")
        if not 0.0 <= self.focus_disparity <= 1.0:
            raise ValueError("focus_disparity must lie in [0, 1]")
        if not self.defocus_scale > 0:
            raise ValueError("defocus_scale must be positive")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.quality_taps < 4:
            raise ValueError("quality_taps must be >= 4 (tile step <= 0.25 px)")
        if not self.max_radius_px > 0:
            raise ValueError("max_radius_px must be positive")


@dataclass
class BokehStack:
    """All-in-focus reference plus renders at strictly increasing strengths."""

    reference: RasterImage
    frames: list[tuple[float, RasterImage]]
    focus_disparity: float
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        ks = [k for k, _ in self.frames]
        if any(k <= 0 for k in ks):
            raise ValueError("frame strengths must be positive (the reference is k=0)")
        if any(b <= a for a, b in zip(ks, ks[1:])):
            raise ValueError("frame strengths must be strictly increasing")
        dims = {(self.reference.width, self.reference.height)}
        dims.update((im.width, im.height) for _, im in self.frames)
        if len(dims) != 1:
            raise ValueError("reference and frames must share dimensions")

    @property
    def ks(self) -> list[float]:
        return [k for k, _ in self.frames]


def _disk_segment_area(x: float, r: float) -> float:
    # antiderivative of sqrt(r^2 - x^2)
    x = min(max(x, -r), r)
    return 0.5 * (x * math.sqrt(max(r * r - x * x, 0.0)) + r * r * math.asin(x / r))


def _disk_rect_area(r: float, x1: float, x2: float, y1: float, y2: float) -> float:
    """Exact area of the origin-centered disk of radius r inside the
    rectangle, by column integration with analytic breakpoints."""
    x1 = max(x1, -r)
    x2 = min(x2, r)
    if x1 >= x2:
        return 0.0
    bps = {x1, x2}
    for y in (y1, y2):
        if abs(y) < r:
            xb = math.sqrt(r * r - y * y)
            for s in (-xb, xb):
                if x1 < s < x2:
                    bps.add(s)
    total = 0.0
    bps = sorted(bps)
    for a, b in zip(bps[:-1], bps[1:]):
        xm = 0.5 * (a + b)
        g = math.sqrt(max(r * r - xm * xm, 0.0))
        if min(y2, g) <= max(y1, -g):
            continue
        # ties go to the arc branch: the arc is the a.e. tighter bound
        seg = (_disk_segment_area(b, r) - _disk_segment_area(a, r)) if g <= y2 else y2 * (b - a)
        seg += (_disk_segment_area(b, r) - _disk_segment_area(a, r)) if -g >= y1 else -y1 * (b - a)
        total += seg
    return total


@lru_cache(maxsize=8192)
def _pillbox_cached(radius: float) -> np.ndarray:
    if radius < 0.5:
        k = np.array([[1.0]], dtype=np.float64)
        k.setflags(write=False)
        return k
    half = math.ceil(radius + 0.5) - 1
    size = 2 * half + 1
    k = np.zeros((size, size), dtype=np.float64)
    # one octant computed exactly, mirrored for exact 8-fold symmetry
    for j in range(half + 1):
        for i in range(j, half + 1):
            a = _disk_rect_area(radius, i - 0.5, i + 0.5, j - 0.5, j + 0.5)
            for ii, jj in {(i, j), (-i, j), (i, -j), (-i, -j), (j, i), (-j, i), (j, -i), (-j, -i)}:
                k[jj + half, ii + half] = a
    k /= k.sum()
    k.setflags(write=False)
    return k


def pillbox_kernel(radius_px: float) -> np.ndarray:
    """Normalized pillbox PSF with exact per-cell disk coverage.

    Radius below 0.5 px degenerates to the single-tap identity kernel.
    """
    if radius_px < 0:
        raise ValueError("radius must be nonnegative")
    return _pillbox_cached(float(radius_px))


def _radius_lut(max_idx: int, step: float) -> list[np.ndarray]:
    return [pillbox_kernel(j * step) for j in range(max_idx + 1)]


def blur_layer(
    image: np.ndarray,
    radius_map: np.ndarray,
    taps: int = 8,
    mode: str = "mirror",
    max_radius_px: float = 64.0,
) -> np.ndarray:
    """Spatially varying pillbox blur of an (H, W, C) linear image.

    The radius map is quantized to a step of 1/taps pixels (so the tile
    error is at most half that) and each level uses one exact kernel.
    """
    r = np.asarray(radius_map, dtype=np.float64)
    if r.min() < 0:
        raise ValueError("radius map must be nonnegative")
    rmax = float(r.max())
    if rmax > max_radius_px:
        raise ValueError(
            f"blur radius {rmax:.2f} px exceeds the configured maximum "
            f"{max_radius_px:.2f} px"
        )
    step = 1.0 / taps
    idx = np.rint(r / step).astype(np.int32)
    lut = _radius_lut(int(idx.max()), step)
    return kernels.varying_convolve(np.asarray(image, dtype=np.float32), idx, lut, mode=mode)


def _expand_rect(x0, y0, x1, y1, margin, w, h):
    return (
        max(0, x0 - margin),
        max(0, y0 - margin),
        min(w, x1 + margin),
        min(h, y1 + margin),
    )


def render_bokeh(
    scene: LayeredScene, params: RenderParams, output_colorspace: str = DISPLAY_GAMMA
) -> RasterImage:
    """Render one bokeh image from a layered scene.

    Background and foreground are blurred with their own per-pixel radii;
    the foreground color and alpha share the same PSF (premultiplied
    convolution), which keeps partial occlusion correct at soft edges.
    """
    if output_colorspace not in (LINEAR, DISPLAY_GAMMA):
        raise ValueError(f"unknown output colorspace {output_colorspace!r}")
    cw, ch = scene.canvas_px
    d_bg = scene.background_plane.evaluate(cw, ch).astype(np.float64)
    d_fg = scene.foreground_plane.evaluate(cw, ch).astype(np.float64)
    s = params.defocus_scale
    r_bg = params.k * np.abs(d_bg - params.focus_disparity) / s
    r_fg = params.k * np.abs(d_fg - params.focus_disparity) / s
    for name, rmap in (("background", r_bg), ("foreground", r_fg)):
        m = float(rmap.max())
        if m > params.max_radius_px:
            raise ValueError(
                f"{name} blur radius {m:.2f} px exceeds the configured maximum "
                f"{params.max_radius_px:.2f} px (k={params.k})"
            )

    bg_blur = blur_layer(
        scene.background.samples,
        r_bg,
        taps=params.quality_taps,
        mode="mirror",
        max_radius_px=params.max_radius_px,
    )

    # Premultiplied foreground restricted to its influence region: outside
    # the placement rect plus the blur reach, the contribution is zero.
    rgba = scene.foreground_rgba_canvas()
    rect = scene.placement
    reach = int(math.ceil(float(r_fg.max()))) + 1
    x0, y0, x1, y1 = _expand_rect(
        rect.x, rect.y, rect.x + rect.width, rect.y + rect.height, reach, cw, ch
    )
    sub = rgba[y0:y1, x0:x1]
    premult = np.concatenate([sub[:, :, :3] * sub[:, :, 3:4], sub[:, :, 3:4]], axis=2)
    blurred = blur_layer(
        premult,
        r_fg[y0:y1, x0:x1],
        taps=params.quality_taps,
        mode="zero",
        max_radius_px=params.max_radius_px,
    )
    fg_color = np.zeros((ch, cw, 3), dtype=np.float32)
    fg_alpha = np.zeros((ch, cw), dtype=np.float32)
    fg_color[y0:y1, x0:x1] = blurred[:, :, :3]
    fg_alpha[y0:y1, x0:x1] = blurred[:, :, 3]

    out = fg_color + (1.0 - fg_alpha[:, :, None]) * bg_blur
    out = center_crop(out, scene.final_crop_px)
    out = np.clip(out, 0.0, 1.0)
    if output_colorspace == LINEAR:
        return RasterImage(out, colorspace=LINEAR)
    return RasterImage(encode_gamma(out, params.gamma), colorspace=DISPLAY_GAMMA)


def render_stack(
    scene: LayeredScene,
    ks: list[float],
    focus_disparity: float,
    defocus_scale: float = 1.0,
    gamma: float = 2.2,
    quality_taps: int = 8,
    max_radius_px: float = 64.0,
    output_colorspace: str = DISPLAY_GAMMA,
    provenance: dict | None = None,
) -> BokehStack:
    """Render the all-in-focus reference plus one frame per strength."""
    if not ks:
        raise ValueError("ks must be a nonempty ascending list of positive strengths")
    if any(k <= 0 for k in ks) or any(b <= a for a, b in zip(ks, ks[1:])):
        raise ValueError("ks must be strictly increasing and positive")
    aif, _ = composite_scene(scene)
    if output_colorspace == DISPLAY_GAMMA:
        reference = RasterImage(encode_gamma(aif.samples, gamma), colorspace=DISPLAY_GAMMA)
    else:
        reference = aif
    frames = []
    for k in ks:
        params = RenderParams(
            k=k,
            focus_disparity=focus_disparity,
            defocus_scale=defocus_scale,
            gamma=gamma,
            quality_taps=quality_taps,
            max_radius_px=max_radius_px,
        )
        try:
            frames.append((k, render_bokeh(scene, params, output_colorspace)))
        except ValueError as e:
            raise ValueError(f"rendering failed at k={k}: {e}") from e
    prov = dict(provenance or {})
    prov.update(
        {
            "defocus_scale": defocus_scale,
            "gamma": gamma,
            "quality_taps": quality_taps,
            "max_radius_px": max_radius_px,
        }
    )
    return BokehStack(
        reference=reference, frames=frames, focus_disparity=focus_disparity, provenance=prov
    )
