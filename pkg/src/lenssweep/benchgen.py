"""Synthetic bokeh benchmark generation.

Composites foreground mattes over background photographs on planar
disparity layers, renders a small set of calibrated bokeh strengths per
scene, and writes the four-directory layout (aif/, images/, depth/,
metadata/) with one JSON descriptor per bokeh image. Generation is
bit-reproducible: a counter-based RNG keyed on (seed, scene index), no
timestamps anywhere.
"""

from __future__ import annotations

import json
import logging
import math
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import zoom

from . import io_formats, optics
from .raster import LINEAR, RasterImage
from .renderer import render_stack
from .scene import (
    LayeredScene,
    PlacementRect,
    PlanarDisparity,
    composite_scene,
    sample_background_plane,
)

log = logging.getLogger(__name__)

BENCH_SCHEMA = "lenssweep/bench/v1"
RNG_ID = "philox4x64 (numpy)"

_TOP_DIRS = ("aif", "images", "depth", "metadata")
_K_TOKEN = re.compile(r"_k([0-9]+\.[0-9]+)\.(png|jpg)$")

# scaled assets below this side length carry no usable silhouette
MIN_SCALED_SIDE_PX = 8


@dataclass(frozen=True)
class BenchmarkPolicy:
    """Sampling policy for one generation run. canvas_px is the final
    frame; rendering happens on a margin-padded working canvas that is
    center-cropped afterwards to absorb boundary effects."""

    canvas_px: tuple[int, int] = (1024, 1024)
    margin_px: int = 64
    fg_area_fraction: tuple[float, float] = (0.30, 0.80)
    n_k_per_scene: int = 3
    k_range: tuple[float, float] = (5.0, 25.0)
    fnumber_range: tuple[float, float] = (1.4, 22.0)
    bg_disparity_range: tuple[float, float] = (0.2, 0.6)
    fg_disparity_band: tuple[float, float] = (0.65, 0.95)
    fg_band_margin: float = 0.05
    d_f_policy: str = "foreground-focused"
    defocus_scale: float = 1.0
    gamma: float = 2.2
    quality_taps: int = 8
    center_jitter_frac: float = 0.03
    seed: int = 0

    def __post_init__(self):
        for name in ("fg_area_fraction", "k_range", "fnumber_range", "bg_disparity_range", "fg_disparity_band"):
            lo, hi = getattr(self, name)
            if not 0 < lo < hi:
                raise ValueError(f"{name} must satisfy 0 < lo < hi")
        if self.n_k_per_scene < 1:
            raise ValueError("n_k_per_scene must be >= 1")
        if self.margin_px < 0:
            raise ValueError("margin_px must be nonnegative")
        if self.seed < 0:
            raise ValueError("seed must be a nonnegative 64-bit integer")
        if self.d_f_policy != "foreground-focused":
            raise ValueError("only the foreground-focused d_f policy exists")


@dataclass
class SceneRecord:
    scene_id: str
    aif_path: str
    depth_path: str
    bokeh: list[dict] = field(default_factory=list)


def scene_rng(seed: int, scene_index: int) -> np.random.Generator:
    """Counter-based generator keyed on (run seed, scene index)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, scene_index])))


def _alpha_bbox(alpha: np.ndarray) -> tuple[int, int, int, int]:
    rows = np.flatnonzero(alpha.any(axis=1))
    cols = np.flatnonzero(alpha.any(axis=0))
    if rows.size == 0:
        raise ValueError("foreground has empty alpha support")
    return cols[0], rows[0], cols[-1] + 1, rows[-1] + 1


def _resize(samples: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    fy = out_h / samples.shape[0]
    fx = out_w / samples.shape[1]
    out = zoom(samples, (fy, fx, 1), order=1, mode="nearest", grid_mode=True)
    return np.clip(out[:out_h, :out_w], 0.0, 1.0).astype(np.float32)


def place_foreground(
    rng: np.random.Generator,
    fg: RasterImage,
    canvas_px: tuple[int, int],
    policy: BenchmarkPolicy,
) -> tuple[PlacementRect, RasterImage]:
    """Tight-crop the matte to its alpha bounding box, rescale it so its
    alpha support covers a sampled fraction of the final frame, and place
    it near the canvas center with a small random offset.

    Returns the placement rect on the working canvas plus the scaled matte.
    """
    if fg.channels != 4:
        raise ValueError("foreground must be RGBA")
    alpha = fg.alpha()
    x0, y0, x1, y1 = _alpha_bbox(alpha > 0)
    cropped = fg.samples[y0:y1, x0:x1]
    bw, bh = x1 - x0, y1 - y0
    support = float(np.count_nonzero(cropped[:, :, 3] > 0))
    frame_area = float(policy.canvas_px[0] * policy.canvas_px[1])
    cw, ch = canvas_px

    def u_of(scale: float) -> float:
        return support * scale * scale / frame_area

    f_fit = min(cw / bw, ch / bh)
    f_min = MIN_SCALED_SIDE_PX / min(bw, bh)
    lo = max(policy.fg_area_fraction[0], u_of(f_min))
    hi = min(policy.fg_area_fraction[1], u_of(f_fit))
    if lo > hi:
        raise ValueError(
            f"asset cannot reach an area fraction in {policy.fg_area_fraction} "
            f"at any scale >= {MIN_SCALED_SIDE_PX} px that fits the canvas"
        )
    u = rng.uniform(lo, hi)
    f = math.sqrt(u * frame_area / support)
    out_w = max(1, min(cw, round(bw * f)))
    out_h = max(1, min(ch, round(bh * f)))
    scaled = RasterImage(_resize(cropped, out_w, out_h), colorspace=fg.colorspace)

    jx = policy.center_jitter_frac * cw
    jy = policy.center_jitter_frac * ch
    px = (cw - out_w) / 2 + rng.uniform(-jx, jx)
    py = (ch - out_h) / 2 + rng.uniform(-jy, jy)
    px = int(np.clip(round(px), 0, cw - out_w))
    py = int(np.clip(round(py), 0, ch - out_h))
    return PlacementRect(x=px, y=py, width=out_w, height=out_h), scaled


@dataclass(frozen=True)
class LensDraw:
    ks: tuple[float, ...]
    d_f: float
    fnumbers: tuple[float, ...]


def sample_lens_draw(
    rng: np.random.Generator,
    policy: BenchmarkPolicy,
    fg_band: tuple[float, float] | None = None,
) -> LensDraw:
    """Draw ascending distinct strengths, a focus disparity inside the
    foreground band, and the equivalent f-number per strength.

    The strength-to-aperture map runs the f-stop interpolation backwards:
    the strongest blur maps to the widest aperture (smallest f-number).
    """
    k_lo, k_hi = policy.k_range
    for _ in range(100):
        ks = sorted(round(float(v), 3) for v in rng.uniform(k_lo, k_hi, size=policy.n_k_per_scene))
        if len(set(ks)) == policy.n_k_per_scene:
            break
    else:
        raise RuntimeError("could not draw distinct strengths")
    band = fg_band if fg_band is not None else policy.fg_disparity_band
    d_f = float(rng.uniform(band[0], min(band[1], 1.0)))
    fnumbers = []
    for k in ks:
        t = (k - k_lo) / (k_hi - k_lo)
        fnumbers.append(optics.fstop_to_fnumber(1.0 - min(max(t, 0.0), 1.0), *policy.fnumber_range))
    return LensDraw(ks=tuple(ks), d_f=d_f, fnumbers=tuple(fnumbers))


def build_scene(
    rng: np.random.Generator,
    fg: RasterImage,
    bg: RasterImage,
    policy: BenchmarkPolicy,
    provenance: dict | None = None,
) -> LayeredScene:
    """Assemble one layered scene: background resized to the working
    canvas, matte placed, and the two disparity planes sampled with the
    foreground band strictly above the background's maximum."""
    fw, fh = policy.canvas_px
    work = (fw + 2 * policy.margin_px, fh + 2 * policy.margin_px)
    bg_rgb = bg.rgb() if bg.channels != 1 else np.repeat(bg.samples, 3, axis=2)
    bg_resized = RasterImage(_resize(bg_rgb, work[0], work[1]), colorspace=LINEAR)
    rect, scaled_fg = place_foreground(rng, fg, work, policy)

    band_lo, band_hi = policy.fg_disparity_band
    for _ in range(50):
        bg_plane = sample_background_plane(rng, policy.bg_disparity_range)
        lo_eff = max(band_lo, bg_plane.corner_range()[1] + policy.fg_band_margin)
        if lo_eff < band_hi:
            fg_plane = sample_background_plane(rng, (lo_eff, band_hi), slope_max=0.03)
            break
    else:
        raise RuntimeError("could not sample disparity planes with a separated band")

    return LayeredScene(
        background=bg_resized,
        background_plane=bg_plane,
        foreground=scaled_fg,
        foreground_plane=fg_plane,
        placement=rect,
        canvas_px=work,
        final_crop_px=policy.canvas_px,
        provenance=provenance,
    )


def _list_assets(directory: Path, suffixes: tuple[str, ...]) -> list[Path]:
    out = [p for p in sorted(directory.iterdir()) if p.suffix.lower() in suffixes]
    if not out:
        raise ValueError(f"no usable assets in {directory}")
    return out


def _generate_scene(args) -> dict | None:
    (idx, fg_path, bg_path, policy, out_dir, jpeg) = args
    out = Path(out_dir)
    scene_id = f"scene_{idx:04d}"
    try:
        rng = scene_rng(policy.seed, idx)
        fg = io_formats.read_image_linear(fg_path, expect_alpha=True)
        bg = io_formats.read_image_linear(bg_path)
        seed_note = {"seed": [policy.seed, idx], "rng": RNG_ID}
        scene = build_scene(rng, fg, bg, policy, provenance=seed_note)
        draw = sample_lens_draw(rng, policy, fg_band=scene.foreground_plane.corner_range())

        stack = render_stack(
            scene,
            list(draw.ks),
            draw.d_f,
            defocus_scale=policy.defocus_scale,
            gamma=policy.gamma,
            quality_taps=policy.quality_taps,
        )
        _, disparity = composite_scene(scene)

        aif_rel = f"aif/{scene_id}.png"
        depth_rel = f"depth/{scene_id}.pfm"
        io_formats.write_png8(stack.reference, out / aif_rel)
        io_formats.write_pfm(disparity, out / depth_rel)

        ext = "jpg" if jpeg else "png"
        record = {"scene_id": scene_id, "aif_path": aif_rel, "depth_path": depth_rel, "bokeh": []}
        for (k, image), fnumber in zip(stack.frames, draw.fnumbers):
            token = f"{k:.3f}"
            image_rel = f"images/{scene_id}_k{token}.{ext}"
            meta_rel = f"metadata/{scene_id}_k{token}.json"
            if jpeg:
                io_formats.write_jpeg8(image, out / image_rel)
            else:
                io_formats.write_png8(image, out / image_rel)
            meta = {
                "schema": BENCH_SCHEMA,
                "id": f"{scene_id}_k{token}",
                "scene_id": scene_id,
                "aif": aif_rel,
                "depth": depth_rel,
                "image": image_rel,
                "k": k,
                "d_f": draw.d_f,
                "fnumber": fnumber,
                "defocus_scale": policy.defocus_scale,
                "gamma": policy.gamma,
                "quality_taps": policy.quality_taps,
                "seed": [policy.seed, idx],
                "rng": RNG_ID,
                "fg_asset": Path(fg_path).name,
                "bg_asset": Path(bg_path).name,
                "placement": [
                    scene.placement.x,
                    scene.placement.y,
                    scene.placement.width,
                    scene.placement.height,
                ],
                "bg_plane": {"a": scene.background_plane.a, "b": scene.background_plane.b, "c": scene.background_plane.c},
                "fg_plane": {"a": scene.foreground_plane.a, "b": scene.foreground_plane.b, "c": scene.foreground_plane.c},
                "canvas_px": list(policy.canvas_px),
            }
            io_formats.dump_json(meta, out / meta_rel)
            record["bokeh"].append(
                {"k": k, "d_f": draw.d_f, "fnumber": fnumber, "image": image_rel, "metadata": meta_rel}
            )
        return record
    except Exception as e:  # per-scene isolation: log and skip
        log.warning("scene %s failed (%s / %s): %s", scene_id, Path(fg_path).name, Path(bg_path).name, e)
        return None


def generate_benchmark(
    fg_dir: str | Path,
    bg_dir: str | Path,
    out_dir: str | Path,
    policy: BenchmarkPolicy,
    n_scenes: int | None = None,
    jpeg: bool = False,
    jobs: int = 1,
) -> list[SceneRecord]:
    """Generate the benchmark tree. Scenes cycle through the cartesian
    product of foreground and background assets; each scene is an
    independent unit of work, so failures skip that scene only."""
    fgs = _list_assets(Path(fg_dir), (".png",))
    bgs = _list_assets(Path(bg_dir), (".png", ".jpg", ".jpeg"))
    pairs = [(f, b) for f in fgs for b in bgs]
    n = n_scenes if n_scenes is not None else len(pairs)
    if n < 1:
        raise ValueError("need at least one scene")
    out = Path(out_dir)
    for d in _TOP_DIRS:
        (out / d).mkdir(parents=True, exist_ok=True)

    tasks = []
    for i in range(n):
        fg_path, bg_path = pairs[i % len(pairs)]
        tasks.append((i, str(fg_path), str(bg_path), policy, str(out), jpeg))

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_generate_scene, tasks))
    else:
        results = [_generate_scene(t) for t in tasks]

    records = [SceneRecord(**r) for r in results if r is not None]
    if not records:
        raise RuntimeError("benchmark generation produced zero scenes")
    return records


def validate_benchmark(root: str | Path) -> dict:
    """Re-scan a generated tree and assert the layout contract: the four
    top-level directories, parseable schema-tagged metadata, existing
    referenced files, and filename k tokens matching the recorded k."""
    root = Path(root)
    for d in _TOP_DIRS:
        if not (root / d).is_dir():
            raise ValueError(f"missing top-level directory {d}/")
    metas = sorted((root / "metadata").glob("*.json"))
    if not metas:
        raise ValueError("no metadata records found")
    scenes = set()
    for meta_path in metas:
        try:
            with open(meta_path, "r", encoding="utf-8") as f:
                meta = json.load(f)
        except json.JSONDecodeError as e:
            raise ValueError(f"{meta_path.name}: invalid JSON: {e.msg}") from e
        if meta.get("schema") != BENCH_SCHEMA:
            raise ValueError(f"{meta_path.name}: schema is not {BENCH_SCHEMA}")
        for key in ("aif", "depth", "image"):
            rel = meta.get(key)
            if not rel or not (root / rel).is_file():
                raise ValueError(f"{meta_path.name}: referenced {key} file missing: {rel}")
        m = _K_TOKEN.search(meta["image"])
        if not m:
            raise ValueError(f"{meta_path.name}: image filename has no k token")
        if float(m.group(1)) != float(meta["k"]):
            raise ValueError(
                f"{meta_path.name}: filename k token {m.group(1)} != metadata k {meta['k']}"
            )
        scenes.add(meta["scene_id"])
    return {"scenes": len(scenes), "bokeh_images": len(metas), "ok": True}
