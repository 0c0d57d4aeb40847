"""Two-layer scene model.

A background image carries a planar disparity field; a foreground RGBA
matte carries its own planar disparity band placed strictly nearer the
camera. Scenes composite into an all-in-focus reference plus a fused
disparity map, and serialize to a JSON document.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io_formats
from .raster import LINEAR, DisparityMap, RasterImage, center_crop

SCENE_SCHEMA = "lenssweep/scene/v1"

# Disparity is fused with a hard assignment; soft edges are the
# renderer's business via PSF-weighted alpha.
ALPHA_DISPARITY_THRESHOLD = 0.5

# Minimum allowed plane denominator over the unit square.
MIN_PLANE_DENOM = 0.05


@dataclass(frozen=True)
class PlanarDisparity:
    """d(x, y) = c / (1 - a*x - b*y) over normalized coordinates in [0, 1]."""

    a: float
    b: float
    c: float

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError("plane coefficient c must be positive")
        for x, y in ((0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)):
            denom = 1.0 - self.a * x - self.b * y
            if denom < MIN_PLANE_DENOM:
                raise ValueError(
                    f"plane denominator {denom:.4f} at corner ({x},{y}) "
                    f"below {MIN_PLANE_DENOM}"
                )

    def evaluate(self, width: int, height: int) -> np.ndarray:
        """Evaluate on a pixel grid; coordinates are pixel-center based."""
        xs = (np.arange(width, dtype=np.float64) + 0.5) / width
        ys = (np.arange(height, dtype=np.float64) + 0.5) / height
        denom = 1.0 - self.a * xs[None, :] - self.b * ys[:, None]
        return (self.c / denom).astype(np.float32)

    def corner_range(self) -> tuple[float, float]:
        """Exact min/max over the unit square (extremes sit at corners
        because the denominator is affine and positive)."""
        vals = [
            self.c / (1.0 - self.a * x - self.b * y)
            for x, y in ((0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0))
        ]
        return min(vals), max(vals)


def sample_background_plane(
    rng: np.random.Generator,
    disparity_range: tuple[float, float],
    slope_max: float = 0.35,
    max_tries: int = 200,
) -> PlanarDisparity:
    """Draw a plane whose values over the unit square stay inside the range.

    Slopes are drawn uniformly, then c is drawn so that the corner extremes
    fit the band; draws that cannot fit are retried a bounded number of times.
    """
    lo, hi = disparity_range
    if not 0 < lo < hi:
        raise ValueError("disparity_range must satisfy 0 < lo < hi")
    for _ in range(max_tries):
        a = rng.uniform(-slope_max, slope_max)
        b = rng.uniform(-slope_max, slope_max)
        denoms = [1.0 - a * x - b * y for x, y in ((0, 0), (1, 0), (0, 1), (1, 1))]
        if min(denoms) < MIN_PLANE_DENOM:
            continue
        gmin = 1.0 / max(denoms)
        gmax = 1.0 / min(denoms)
        c_lo = lo / gmin  # smallest c keeping the minimum at/above lo
        c_hi = hi / gmax  # largest c keeping the maximum at/below hi
        if c_lo > c_hi:
            continue  # slope too steep for the band
        c = rng.uniform(c_lo, c_hi)
        return PlanarDisparity(a=a, b=b, c=c)
    raise RuntimeError(
        f"could not sample a plane inside {disparity_range} after {max_tries} tries"
    )


@dataclass(frozen=True)
class PlacementRect:
    """Integer pixel rectangle (x, y are the top-left corner)."""

    x: int
    y: int
    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("placement rect must have positive size")


@dataclass
class LayeredScene:
    background: RasterImage
    background_plane: PlanarDisparity
    foreground: RasterImage
    foreground_plane: PlanarDisparity
    placement: PlacementRect
    canvas_px: tuple[int, int]
    final_crop_px: tuple[int, int]
    provenance: dict | None = None

    def __post_init__(self):
        cw, ch = self.canvas_px
        fw, fh = self.final_crop_px
        if self.background.channels != 3 or self.background.colorspace != LINEAR:
            raise ValueError("background must be a 3-channel linear raster")
        if self.foreground.channels != 4 or self.foreground.colorspace != LINEAR:
            raise ValueError("foreground must be a 4-channel linear RGBA raster")
        if (self.background.width, self.background.height) != (cw, ch):
            raise ValueError("background raster must be canvas-sized")
        if (self.placement.width, self.placement.height) != (
            self.foreground.width,
            self.foreground.height,
        ):
            raise ValueError("placement rect must match the foreground raster size")
        r = self.placement
        if r.x < 0 or r.y < 0 or r.x + r.width > cw or r.y + r.height > ch:
            raise ValueError("placement rect must lie fully inside the canvas")
        if fw > cw or fh > ch:
            raise ValueError("final crop must fit inside the canvas")
        self._check_occlusion_order()

    def _check_occlusion_order(self):
        alpha = self.foreground_alpha_canvas()
        support = alpha > 0
        if not support.any():
            return  # empty matte composites to the bare background
        cw, ch = self.canvas_px
        bg = self.background_plane.evaluate(cw, ch)
        fg = self.foreground_plane.evaluate(cw, ch)
        fg_min = float(fg[support].min())
        bg_max = float(bg[support].max())
        if not fg_min > bg_max:
            raise ValueError(
                "foreground must be strictly nearer than the background over "
                f"its alpha support (fg min {fg_min:.4f} <= bg max {bg_max:.4f})"
            )

    def foreground_alpha_canvas(self) -> np.ndarray:
        """Foreground alpha pasted into a canvas-sized (H, W) array."""
        cw, ch = self.canvas_px
        alpha = np.zeros((ch, cw), dtype=np.float32)
        r = self.placement
        alpha[r.y : r.y + r.height, r.x : r.x + r.width] = self.foreground.alpha()
        return alpha

    def foreground_rgba_canvas(self) -> np.ndarray:
        """Foreground RGBA pasted into a canvas-sized (H, W, 4) array."""
        cw, ch = self.canvas_px
        rgba = np.zeros((ch, cw, 4), dtype=np.float32)
        r = self.placement
        rgba[r.y : r.y + r.height, r.x : r.x + r.width] = self.foreground.samples
        return rgba


def composite_scene(scene: LayeredScene) -> tuple[RasterImage, DisparityMap]:
    """All-in-focus alpha-over composite (linear light) and the fused
    disparity map, both cropped to the final window."""
    cw, ch = scene.canvas_px
    rgba = scene.foreground_rgba_canvas()
    alpha = rgba[:, :, 3:4]
    over = rgba[:, :, :3] * alpha + (1.0 - alpha) * scene.background.samples

    bg_d = scene.background_plane.evaluate(cw, ch)
    fg_d = scene.foreground_plane.evaluate(cw, ch)
    fused = np.where(alpha[:, :, 0] > ALPHA_DISPARITY_THRESHOLD, fg_d, bg_d)

    crop = scene.final_crop_px
    image = RasterImage(center_crop(over, crop), colorspace=LINEAR)
    disparity = DisparityMap(center_crop(fused, crop))
    return image, disparity


def _plane_to_json(p: PlanarDisparity) -> dict:
    return {"a": p.a, "b": p.b, "c": p.c}


def _plane_from_json(d: dict) -> PlanarDisparity:
    return PlanarDisparity(a=float(d["a"]), b=float(d["b"]), c=float(d["c"]))


def scene_to_json(scene: LayeredScene, background_path: str, foreground_path: str) -> dict:
    """Scene description document; image pixels live in the referenced files."""
    return {
        "schema": SCENE_SCHEMA,
        "canvas_px": list(scene.canvas_px),
        "final_crop_px": list(scene.final_crop_px),
        "background": {"path": background_path, "plane": _plane_to_json(scene.background_plane)},
        "foreground": {"path": foreground_path, "plane": _plane_to_json(scene.foreground_plane)},
        "placement": [
            scene.placement.x,
            scene.placement.y,
            scene.placement.width,
            scene.placement.height,
        ],
        "provenance": scene.provenance or {},
    }


def scene_from_json(doc: dict, base_dir: str | Path) -> LayeredScene:
    if doc.get("schema") != SCENE_SCHEMA:
        raise ValueError(f"expected schema {SCENE_SCHEMA}, got {doc.get('schema')!r}")
    base = Path(base_dir)
    bg = io_formats.read_image_linear(base / doc["background"]["path"])
    fg = io_formats.read_image_linear(base / doc["foreground"]["path"], expect_alpha=True)
    x, y, w, h = (int(v) for v in doc["placement"])
    return LayeredScene(
        background=bg,
        background_plane=_plane_from_json(doc["background"]["plane"]),
        foreground=fg,
        foreground_plane=_plane_from_json(doc["foreground"]["plane"]),
        placement=PlacementRect(x=x, y=y, width=w, height=h),
        canvas_px=tuple(int(v) for v in doc["canvas_px"]),
        final_crop_px=tuple(int(v) for v in doc["final_crop_px"]),
        provenance=doc.get("provenance") or None,
    )


def load_scene(path: str | Path) -> LayeredScene:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    return scene_from_json(doc, path.parent)
