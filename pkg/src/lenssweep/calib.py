"""Camera-metadata harmonization.

Heterogeneous capture metadata (EXIF dumps, aperture triplets, render
manifests) is reduced to one record schema carrying a calibrated bokeh
strength normalized to a 512 px reference width ("dof-cond"), its
crop-corrected variant, and a relaxed depth-of-field flag.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import asdict, dataclass
from datetime import datetime
from pathlib import Path
from typing import Iterator

import numpy as np

from . import io_formats, optics
from .raster import RasterImage, luminance

log = logging.getLogger(__name__)

ANNS_SCHEMA = "lenssweep/anns/v1"

REFERENCE_WIDTH_PX = 512
DOF_COND_MAX = 30.0
FULL_FRAME_WIDTH_MM = 36.0

# dof-cond is expressed per unit inverse-depth offset in 1/m; the optics
# strength is computed in millimeters, hence the conversion factor.
_PER_METER = 1.0 / 1000.0

# DPDD-style pairing: exposures of one scene land within this window.
PAIRING_WINDOW_S = 60.0
FOCUS_DISTANCE_TOL = 0.05

# Relaxed in-focus test: the classic sensor-size-dependent criterion
# sensor_width / 1500, widened by the relax factor, probed at a
# near-foreground plane at a fraction of the focus distance.
BASE_COC_DIVISOR = 1500.0
DEFAULT_RELAX_FACTOR = 3.0
DEFAULT_PROBE_FRACTION = 0.8

# Normalized f-stops from render manifests interpolate over this span.
MANIFEST_FNUMBER_RANGE = (1.4, 16.0)

_CANON_FULL_FRAME = ("5D", "6D", "1D X", "1DX", "R5", "R6", "R8", "EOS R", "RP")
_CANON_APSC = ("7D", "90D", "80D", "70D", "60D", "REBEL", "KISS", "R7", "R10", "M50", "M6")
_APSC_WIDTH_MM = 22.3


@dataclass
class CameraAnns:
    """Harmonized per-image camera record."""

    aperture: float
    focal_length_mm: float
    sensor_width_mm: float
    focus_distance_m: float
    dof_cond: float
    foreground_clear: bool
    source: str
    focal_length_35mm: float | None = None
    dof_cond_crop: float | None = None
    image_width_px: int | None = None
    image_height_px: int | None = None

    def to_json(self) -> dict:
        d = asdict(self)
        # the wire schema spells these with dashes
        d["dof-cond"] = d.pop("dof_cond")
        d["dof-cond-crop"] = d.pop("dof_cond_crop")
        return d


def _parse_number(value) -> float | None:
    """Lenient numeric EXIF parsing: plain numbers, '50 mm', '50/1'."""
    if value is None:
        return None
    if isinstance(value, (int, float)):
        return float(value)
    s = str(value).strip()
    m = re.match(r"^([+-]?\d+(?:\.\d+)?)\s*/\s*(\d+(?:\.\d+)?)", s)
    if m:
        denom = float(m.group(2))
        return float(m.group(1)) / denom if denom else None
    m = re.match(r"^([+-]?\d+(?:\.\d+)?)", s)
    return float(m.group(1)) if m else None


def _require(tags: dict, key: str) -> float:
    v = _parse_number(tags.get(key))
    if v is None:
        raise ValueError(f"missing field: {key}")
    return v


def calc_dof_cond(
    anns,
    image_width_px: int,
    reference_width_px: int = REFERENCE_WIDTH_PX,
) -> float:
    """Bokeh strength at the native width, rescaled to the reference width
    and clipped to [0, 30].

    The strength is expressed per unit inverse-depth offset in 1/m, the
    convention under which the [0, 30] clipping range is meaningful for
    real cameras.
    """
    if isinstance(anns, CameraAnns):
        fields = {
            "aperture": anns.aperture,
            "focal_length_mm": anns.focal_length_mm,
            "sensor_width_mm": anns.sensor_width_mm,
            "focus_distance_m": anns.focus_distance_m,
        }
    else:
        fields = dict(anns)
    for name in ("aperture", "focal_length_mm", "sensor_width_mm", "focus_distance_m"):
        if fields.get(name) is None:
            raise ValueError(f"missing field: {name}")
    if image_width_px < 1:
        raise ValueError("image_width_px must be >= 1")
    lens = optics.LensConfig(
        focal_length_mm=float(fields["focal_length_mm"]),
        f_number=float(fields["aperture"]),
        focus_distance_m=float(fields["focus_distance_m"]),
        sensor_width_mm=float(fields["sensor_width_mm"]),
        image_width_px=int(image_width_px),
        image_height_px=1,
    )
    k_native = optics.bokeh_strength_k(lens, int(image_width_px))
    k_ref = k_native * (reference_width_px / image_width_px) * _PER_METER
    return float(min(max(k_ref, 0.0), DOF_COND_MAX))


def estimate_sensor_width(exif: dict) -> tuple[float, str]:
    """Sensor width in millimeters, trying in order: the focal-plane
    resolution tags, inversion of the 35 mm-equivalent focal length, and
    a small camera-model table. Returns (width_mm, strategy)."""
    missing = []

    res = _parse_number(exif.get("FocalPlaneXResolution"))
    unit = _parse_number(exif.get("FocalPlaneResolutionUnit"))
    width = _parse_number(exif.get("ImageWidth") or exif.get("ExifImageWidth"))
    if res and res > 0 and unit and width:
        mm_per_unit = {2: 25.4, 3: 10.0, 4: 1.0, 5: 0.001}.get(int(unit))
        if mm_per_unit:
            return width / res * mm_per_unit, "focal-plane"
        missing.append(f"unknown FocalPlaneResolutionUnit {unit}")
    else:
        missing.append("FocalPlaneXResolution/Unit/ImageWidth")

    f_mm = _parse_number(exif.get("FocalLength"))
    f_35 = _parse_number(exif.get("FocalLengthIn35mmFormat"))
    if f_mm and f_35 and f_35 > 0:
        return FULL_FRAME_WIDTH_MM * f_mm / f_35, "crop-inversion"
    missing.append("FocalLength/FocalLengthIn35mmFormat")

    model = str(exif.get("Model", "")).upper()
    if model:
        if any(tok in model for tok in _CANON_APSC):
            return _APSC_WIDTH_MM, "model-table"
        if any(tok in model for tok in _CANON_FULL_FRAME):
            return FULL_FRAME_WIDTH_MM, "model-table"
        missing.append(f"model {model!r} not in table")
    else:
        missing.append("Model")

    raise ValueError("cannot estimate sensor width; tried " + "; ".join(missing))


def focus_distance_from_depth(depth: np.ndarray, sharp_rgb: RasterImage) -> float:
    """Gradient-weighted median of depth along strong edges.

    The depth raster is resized to the RGB grid by nearest neighbor;
    pixels at or above the 90th percentile of |grad(luma)| vote with
    weight |grad|.
    """
    d = np.asarray(depth, dtype=np.float64)
    if d.ndim != 2:
        raise ValueError("depth must be 2-D")
    h, w = sharp_rgb.height, sharp_rgb.width
    if d.shape != (h, w):
        yi = np.clip((np.arange(h) * d.shape[0] / h).astype(int), 0, d.shape[0] - 1)
        xi = np.clip((np.arange(w) * d.shape[1] / w).astype(int), 0, d.shape[1] - 1)
        d = d[np.ix_(yi, xi)]
    luma = luminance(sharp_rgb).astype(np.float64)
    gy, gx = np.gradient(luma)
    g = np.hypot(gx, gy)
    if g.max() <= 0:
        raise ValueError("image has no gradient support (flat)")
    thr = np.percentile(g, 90)
    sel = (g >= thr) & (g > 0)
    if not sel.any():
        raise ValueError("no pixels above the gradient threshold")
    return weighted_median(d[sel], g[sel])


def weighted_median(values: np.ndarray, weights: np.ndarray) -> float:
    order = np.argsort(values, kind="stable")
    v = np.asarray(values, dtype=np.float64)[order]
    cw = np.cumsum(np.asarray(weights, dtype=np.float64)[order])
    cut = 0.5 * cw[-1]
    return float(v[np.searchsorted(cw, cut)])


def foreground_clear_flag(
    anns: CameraAnns,
    relax_factor: float = DEFAULT_RELAX_FACTOR,
    probe_fraction: float = DEFAULT_PROBE_FRACTION,
) -> bool:
    """Relaxed depth-of-field test: does a near-foreground plane at
    probe_fraction * S1 stay inside the (widened) in-focus bounds?"""
    if not relax_factor > 0:
        raise ValueError("relax_factor must be positive")
    lens = optics.LensConfig(
        focal_length_mm=anns.focal_length_mm,
        f_number=anns.aperture,
        focus_distance_m=anns.focus_distance_m,
        sensor_width_mm=anns.sensor_width_mm,
        image_width_px=anns.image_width_px or 1,
        image_height_px=anns.image_height_px or 1,
    )
    coc_limit = anns.sensor_width_mm / BASE_COC_DIVISOR * relax_factor
    bounds = optics.dof_bounds(lens, coc_limit)
    return bounds.contains(probe_fraction * anns.focus_distance_m)


def _row(input_path: str, target_path: str, anns: CameraAnns, depth_path: str | None = None, extra: dict | None = None) -> dict:
    row = {
        "schema": ANNS_SCHEMA,
        "input": input_path,
        "target": target_path,
        "camera_anns": anns.to_json(),
    }
    if depth_path is not None:
        row["depth"] = depth_path
    if extra:
        row["camera_anns"].update(extra)
    return row


def _trailer(kind: str, rows: int, skipped: int) -> dict:
    return {"schema": ANNS_SCHEMA, "trailer": True, "dataset": kind, "rows": rows, "skipped": skipped}


def _finish_anns(
    aperture: float,
    focal_mm: float,
    f35: float | None,
    sensor_mm: float,
    s1_m: float,
    width: int,
    height: int,
    source: str,
) -> CameraAnns:
    dof = calc_dof_cond(
        {
            "aperture": aperture,
            "focal_length_mm": focal_mm,
            "sensor_width_mm": sensor_mm,
            "focus_distance_m": s1_m,
        },
        image_width_px=width,
    )
    crop = (f35 / focal_mm) if f35 else None
    anns = CameraAnns(
        aperture=aperture,
        focal_length_mm=focal_mm,
        focal_length_35mm=f35,
        sensor_width_mm=sensor_mm,
        focus_distance_m=s1_m,
        dof_cond=dof,
        dof_cond_crop=(dof / crop) if crop else None,
        foreground_clear=False,
        source=source,
        image_width_px=width,
        image_height_px=height,
    )
    anns.foreground_clear = foreground_clear_flag(anns)
    return anns


def _parse_create_date(tags: dict) -> datetime:
    raw = tags.get("CreateDate") or tags.get("DateTimeOriginal")
    if not raw:
        raise ValueError("missing field: CreateDate")
    return datetime.strptime(str(raw)[:19], "%Y:%m:%d %H:%M:%S")


def _dpdd_focus_m(tags: dict) -> float:
    v = _parse_number(tags.get("ApproximateFocusDistance"))
    if v is not None and 0 < v < 1e4:
        return v
    upper = _parse_number(tags.get("FocusDistanceUpper"))
    lower = _parse_number(tags.get("FocusDistanceLower"))
    if upper and lower and 0 < lower <= upper < 1e4:
        return 0.5 * (upper + lower)
    raise ValueError("missing field: ApproximateFocusDistance (or the Upper/Lower pair)")


def _harmonize_dpdd(root: Path, exif_dir: Path, defaults: dict) -> Iterator[dict]:
    records = []
    skipped = 0
    for p in sorted(exif_dir.glob("*.json")):
        try:
            with open(p, "r", encoding="utf-8") as f:
                tags = json.load(f)
            records.append(
                {
                    "name": tags.get("SourceFile", p.stem),
                    "time": _parse_create_date(tags),
                    "fnumber": _require(tags, "FNumber"),
                    "focal": _require(tags, "FocalLength"),
                    "s1": _dpdd_focus_m(tags),
                    "tags": tags,
                }
            )
        except (ValueError, json.JSONDecodeError) as e:
            log.warning("dpdd: skipping %s: %s", p.name, e)
            skipped += 1
    records.sort(key=lambda r: (r["time"], r["name"]))

    groups: list[list[dict]] = []
    for rec in records:
        placed = False
        for g in groups:
            head = g[0]
            if (
                (rec["time"] - head["time"]).total_seconds() <= PAIRING_WINDOW_S
                and rec["focal"] == head["focal"]
                and abs(rec["s1"] - head["s1"]) <= FOCUS_DISTANCE_TOL * head["s1"]
            ):
                g.append(rec)
                placed = True
                break
        if not placed:
            groups.append([rec])

    emitted = 0
    for g in groups:
        if len({r["fnumber"] for r in g}) < 2:
            log.warning("dpdd: group %s has no aperture spread; skipped", g[0]["name"])
            skipped += 1
            continue
        target = min(g, key=lambda r: r["fnumber"])  # widest aperture: the bokeh shot
        source = max(g, key=lambda r: r["fnumber"])  # narrowest: all-in-focus
        try:
            tags = target["tags"]
            sensor, strategy = estimate_sensor_width(tags)
            width = int(_require(tags, "ImageWidth"))
            height = int(_parse_number(tags.get("ImageHeight")) or 1)
            f35 = _parse_number(tags.get("FocalLengthIn35mmFormat"))
            anns = _finish_anns(
                aperture=target["fnumber"],
                focal_mm=target["focal"],
                f35=f35,
                sensor_mm=sensor,
                s1_m=target["s1"],
                width=width,
                height=height,
                source=f"exif/{strategy}",
            )
            yield _row(str(root / source["name"]), str(root / target["name"]), anns)
            emitted += 1
        except ValueError as e:
            log.warning("dpdd: skipping group %s: %s", g[0]["name"], e)
            skipped += 1
    yield _trailer("dpdd", emitted, skipped)


_APERTURE_TARGETS = (8.0, 2.0)
_APERTURE_SOURCE_N = 22.0


def _harmonize_aperture(root: Path, defaults: dict) -> Iterator[dict]:
    focal = float(defaults.get("focal_mm", 50.0))
    sensor = float(defaults.get("sensor_mm", FULL_FRAME_WIDTH_MM))
    crop = float(defaults.get("crop", 1.0))
    emitted = 0
    skipped = 0
    for scene_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        try:
            src = scene_dir / "f22.png"
            depth_path = scene_dir / "depth.pfm"
            rgb = io_formats.read_png8_or_jpeg(src)
            depth = io_formats.read_pfm(depth_path)
            s1 = focus_distance_from_depth(depth, rgb)
            for n in _APERTURE_TARGETS:
                tgt = scene_dir / f"f{n:g}.png"
                if not tgt.exists():
                    raise ValueError(f"missing target image {tgt.name}")
                anns = _finish_anns(
                    aperture=n,
                    focal_mm=focal,
                    f35=focal * crop,
                    sensor_mm=sensor,
                    s1_m=s1,
                    width=rgb.width,
                    height=rgb.height,
                    source="depth-median",
                )
                yield _row(str(src), str(tgt), anns, depth_path=str(depth_path))
                emitted += 1
        except (ValueError, OSError) as e:
            log.warning("aperture: skipping %s: %s", scene_dir.name, e)
            skipped += 1
    yield _trailer("aperture", emitted, skipped)


def _harmonize_blb(root: Path, defaults: dict, derived_dir: Path | None) -> Iterator[dict]:
    emitted = 0
    skipped = 0
    for scene_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        try:
            with open(scene_dir / "info.json", "r", encoding="utf-8") as f:
                info = json.load(f)
            focal = float(info["focal_length_mm"])
            sensor = float(info["sensor_width_mm"])
            width, height = (int(v) for v in info["resolution"])
            crop = FULL_FRAME_WIDTH_MM / sensor
            f35 = focal * crop
            sharp = scene_dir / info["sharp"]
            disparity = io_formats.read_pfm(scene_dir / info["disparity"])

            # disparity -> approximate metric depth raster, written next to
            # the output stream rather than into the input tree
            depth = (1.0 / np.maximum(disparity, 1e-6)).astype(np.float32)
            if derived_dir is not None:
                derived_dir.mkdir(parents=True, exist_ok=True)
                depth_path = derived_dir / f"{scene_dir.name}_depth.pfm"
                io_formats.write_pfm(depth, depth_path)
            else:
                depth_path = None

            dmin, dmax = float(disparity.min()), float(disparity.max())
            for render in info["renders"]:
                s1 = float(info["focus_distances_m"][int(render["focus_idx"])])
                fstop = float(info["f_stops"][int(render["fstop_idx"])])
                n = optics.fstop_to_fnumber(fstop, *MANIFEST_FNUMBER_RANGE)
                anns = _finish_anns(
                    aperture=n,
                    focal_mm=focal,
                    f35=f35,
                    sensor_mm=sensor,
                    s1_m=s1,
                    width=width,
                    height=height,
                    source="renderer-manifest",
                )
                disp_focus = 0.0
                if dmax > dmin:
                    disp_focus = float(np.clip((1.0 / s1 - dmin) / (dmax - dmin), 0.0, 1.0))
                extra = {"disp_focus": disp_focus, "fstop_normalized": fstop}
                yield _row(
                    str(sharp),
                    str(scene_dir / render["path"]),
                    anns,
                    depth_path=str(depth_path) if depth_path else None,
                    extra=extra,
                )
                emitted += 1
        except (ValueError, OSError, KeyError, json.JSONDecodeError) as e:
            log.warning("blb: skipping %s: %s", scene_dir.name, e)
            skipped += 1
    yield _trailer("blb", emitted, skipped)


def harmonize_dataset(
    kind: str,
    root: str | Path,
    defaults: dict | None = None,
    exif_dir: str | Path | None = None,
    derived_dir: str | Path | None = None,
) -> Iterator[dict]:
    """Stream unified JSONL rows for one dataset layout, ending with a
    trailer record carrying row/skip counts. Deterministic for a fixed
    root: inputs are visited in sorted order and no clocks are read."""
    root = Path(root)
    defaults = defaults or {}
    if kind == "dpdd":
        if exif_dir is None:
            raise ValueError("dpdd harmonization needs exif_dir (pre-dumped tag files)")
        yield from _harmonize_dpdd(root, Path(exif_dir), defaults)
    elif kind == "aperture":
        yield from _harmonize_aperture(root, defaults)
    elif kind == "blb":
        yield from _harmonize_blb(root, defaults, Path(derived_dir) if derived_dir else None)
    else:
        raise ValueError(f"unknown dataset kind {kind!r} (expected dpdd|aperture|blb)")
