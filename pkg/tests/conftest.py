"""Shared fixtures: deterministic synthetic assets and miniature
calibration dataset layouts."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from lenssweep import io_formats
from lenssweep.raster import DISPLAY_GAMMA, LINEAR, RasterImage, encode_gamma
from lenssweep.scene import LayeredScene, PlacementRect, PlanarDisparity


def rng_for(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def noise_rgb(rng: np.random.Generator, width: int, height: int) -> np.ndarray:
    return rng.random((height, width, 3)).astype(np.float32)


def disk_matte(rng: np.random.Generator, size: int, radius_frac: float = 0.42) -> np.ndarray:
    """RGBA matte: noise color under a filled-disk alpha."""
    yy, xx = np.mgrid[0:size, 0:size]
    c = (size - 1) / 2.0
    alpha = ((xx - c) ** 2 + (yy - c) ** 2 <= (radius_frac * size) ** 2).astype(np.float32)
    rgba = np.concatenate([noise_rgb(rng, size, size), alpha[:, :, None]], axis=2)
    return rgba


def make_layered_scene(
    seed: int = 0,
    frame_px: int = 96,
    margin_px: int = 16,
    bg_plane: PlanarDisparity | None = None,
    fg_plane: PlanarDisparity | None = None,
    fg_size_frac: float = 0.5,
) -> LayeredScene:
    """Small textured two-layer scene with controllable planes."""
    rng = rng_for(seed)
    work = frame_px + 2 * margin_px
    bg = RasterImage(noise_rgb(rng, work, work), colorspace=LINEAR)
    fg_size = max(8, int(work * fg_size_frac))
    fg = RasterImage(disk_matte(rng, fg_size), colorspace=LINEAR)
    x = (work - fg_size) // 2
    return LayeredScene(
        background=bg,
        background_plane=bg_plane or PlanarDisparity(a=0.15, b=-0.1, c=0.35),
        foreground=fg,
        foreground_plane=fg_plane or PlanarDisparity(a=0.0, b=0.0, c=0.8),
        placement=PlacementRect(x=x, y=x, width=fg_size, height=fg_size),
        canvas_px=(work, work),
        final_crop_px=(frame_px, frame_px),
    )


def write_asset_dirs(base: Path, n_fg: int = 2, n_bg: int = 2, size: int = 96) -> tuple[Path, Path]:
    """Foreground matte PNGs and background PNGs for benchmark generation."""
    fg_dir = base / "fg"
    bg_dir = base / "bg"
    fg_dir.mkdir(parents=True, exist_ok=True)
    bg_dir.mkdir(parents=True, exist_ok=True)
    for i in range(n_fg):
        rng = rng_for(1000 + i)
        rgba = disk_matte(rng, size)
        img = RasterImage(
            np.concatenate([encode_gamma(rgba[:, :, :3]), rgba[:, :, 3:4]], axis=2),
            colorspace=DISPLAY_GAMMA,
        )
        io_formats.write_png8(img, fg_dir / f"matte_{i}.png")
    for i in range(n_bg):
        rng = rng_for(2000 + i)
        img = RasterImage(encode_gamma(noise_rgb(rng, size, size)), colorspace=DISPLAY_GAMMA)
        io_formats.write_png8(img, bg_dir / f"photo_{i}.png")
    return fg_dir, bg_dir


@pytest.fixture
def asset_dirs(tmp_path):
    return write_asset_dirs(tmp_path)


# ------------------------------------------------------ calibration fixtures


def _dpdd_tags(name, minute, fnumber, focal=50.0, s1=1.9, with_fpres=True, with_f35=True):
    tags = {
        "SourceFile": name,
        "CreateDate": f"2021:05:04 10:{minute:02d}:00",
        "FNumber": fnumber,
        "FocalLength": focal,
        "ApproximateFocusDistance": s1,
        "Model": "Canon EOS 5D Mark IV",
        "ImageWidth": 4096,
        "ImageHeight": 2730,
    }
    if with_fpres:
        tags["FocalPlaneXResolution"] = 4096 / 3.6  # px per cm across a 36 mm sensor
        tags["FocalPlaneResolutionUnit"] = 3
    if with_f35:
        tags["FocalLengthIn35mmFormat"] = focal
    return tags


def build_dpdd_fixture(root: Path) -> Path:
    """Three synthetic exposure groups, each with three apertures."""
    exif = root / "exif"
    exif.mkdir(parents=True, exist_ok=True)
    groups = [
        (0, [16.0, 4.0, 1.8], dict(with_fpres=True, with_f35=True)),
        (5, [11.0, 5.6, 2.8], dict(with_fpres=False, with_f35=True)),
        (10, [22.0, 8.0, 2.0], dict(with_fpres=False, with_f35=False)),
    ]
    for gi, (minute, fnumbers, kwargs) in enumerate(groups):
        for fi, n in enumerate(fnumbers):
            name = f"IMG_{gi}{fi}.CR2"
            tags = _dpdd_tags(name, minute, n, s1=1.9 + 0.3 * gi, **kwargs)
            with open(exif / f"IMG_{gi}{fi}.json", "w", encoding="utf-8") as f:
                json.dump(tags, f)
    return exif


def build_aperture_fixture(root: Path, n_scenes: int = 2, size: int = 48) -> None:
    """Captured-triplet layout: f22/f8/f2 images sharing one depth map."""
    for i in range(n_scenes):
        scene = root / f"scene_{i}"
        scene.mkdir(parents=True, exist_ok=True)
        rng = rng_for(3000 + i)
        rgb = RasterImage(encode_gamma(noise_rgb(rng, size, size)), colorspace=DISPLAY_GAMMA)
        for name in ("f22.png", "f8.png", "f2.png"):
            io_formats.write_png8(rgb, scene / name)
        depth = np.full((size, size), 2.0 + 0.5 * i, dtype=np.float32)
        io_formats.write_pfm(depth, scene / "depth.pfm")


def build_blb_fixture(root: Path, size: int = 48) -> None:
    """Render-manifest layout with normalized f-stops."""
    scene = root / "scene_a"
    scene.mkdir(parents=True, exist_ok=True)
    rng = rng_for(4000)
    sharp = RasterImage(encode_gamma(noise_rgb(rng, size, size)), colorspace=DISPLAY_GAMMA)
    io_formats.write_png8(sharp, scene / "sharp.png")
    disparity = (0.2 + 0.6 * rng.random((size, size))).astype(np.float32)
    io_formats.write_pfm(disparity, scene / "disparity.pfm")
    for idx in range(2):
        io_formats.write_png8(sharp, scene / f"bokeh_{idx}.png")
    info = {
        "focal_length_mm": 35.0,
        "sensor_width_mm": 24.0,
        "resolution": [size, size],
        "focus_distances_m": [1.5, 3.0],
        "f_stops": [0.2, 0.7],
        "sharp": "sharp.png",
        "disparity": "disparity.pfm",
        "renders": [
            {"focus_idx": 0, "fstop_idx": 0, "path": "bokeh_0.png"},
            {"focus_idx": 1, "fstop_idx": 1, "path": "bokeh_1.png"},
        ],
    }
    with open(scene / "info.json", "w", encoding="utf-8") as f:
        json.dump(info, f)
