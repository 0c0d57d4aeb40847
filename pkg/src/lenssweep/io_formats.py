"""Bit-exact file I/O.

8-bit PNG for display-gamma images, PFM for float rasters, JSONL for
annotation streams. Readers return structured errors on malformed input;
writers are deterministic (lexicographic JSON keys, no timestamps).
Colorspace conversion never happens here.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .raster import DISPLAY_GAMMA, LINEAR, DisparityMap, RasterImage, decode_gamma

_PIL_MODES = {1: "L", 3: "RGB", 4: "RGBA"}


def write_png8(image: RasterImage, path: str | Path) -> None:
    """Write a display-gamma image as 8-bit PNG (L, RGB, or RGBA)."""
    if image.colorspace != DISPLAY_GAMMA:
        raise ValueError("write_png8 expects a display-gamma image; convert explicitly")
    mode = _PIL_MODES[image.channels]
    q = np.clip(np.round(image.samples * 255.0), 0, 255).astype(np.uint8)
    if image.channels == 1:
        q = q[:, :, 0]
    Image.fromarray(q, mode=mode).save(str(path), format="PNG")


def read_png8(path: str | Path) -> RasterImage:
    """Read an 8-bit PNG as a display-gamma float raster in [0, 1]."""
    try:
        with Image.open(str(path)) as im:
            im.load()
            if im.mode not in ("L", "RGB", "RGBA"):
                im = im.convert("RGBA" if "A" in im.getbands() else "RGB")
            arr = np.asarray(im, dtype=np.float32) / 255.0
    except (UnidentifiedImageError, OSError, SyntaxError) as e:
        raise ValueError(f"cannot decode PNG {path}: {e}") from e
    return RasterImage(arr, colorspace=DISPLAY_GAMMA)


def write_jpeg8(image: RasterImage, path: str | Path, quality: int = 95) -> None:
    """JPEG variant of write_png8; lossy, excluded from bit-exact contracts."""
    if image.colorspace != DISPLAY_GAMMA:
        raise ValueError("write_jpeg8 expects a display-gamma image")
    q = np.clip(np.round(image.rgb() * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(q, mode="RGB").save(str(path), format="JPEG", quality=quality)


def read_image_linear(path: str | Path, expect_alpha: bool = False, gamma: float = 2.2) -> RasterImage:
    """Read a PNG/JPEG and decode display gamma to linear light."""
    img = read_png8_or_jpeg(path)
    if expect_alpha and img.channels != 4:
        raise ValueError(f"{path}: expected an alpha channel, got {img.channels} channels")
    s = img.samples.copy()
    ncol = 3 if img.channels == 4 else img.channels
    s[:, :, :ncol] = decode_gamma(s[:, :, :ncol], gamma)
    return RasterImage(s, colorspace=LINEAR)


def read_png8_or_jpeg(path: str | Path) -> RasterImage:
    try:
        with Image.open(str(path)) as im:
            im.load()
            if im.mode not in ("L", "RGB", "RGBA"):
                im = im.convert("RGBA" if "A" in im.getbands() else "RGB")
            arr = np.asarray(im, dtype=np.float32) / 255.0
    except (UnidentifiedImageError, OSError, SyntaxError) as e:
        raise ValueError(f"cannot decode image {path}: {e}") from e
    return RasterImage(arr, colorspace=DISPLAY_GAMMA)


def write_pfm(values: np.ndarray | DisparityMap, path: str | Path, scale: float = 1.0) -> None:
    """Write a float32 raster as PFM.

    Single channel ("Pf") for 2-D input, 3-channel ("PF") for (H, W, 3).
    Negative header scale encodes little-endian, per the format. Rows are
    stored bottom-up. NaN values are rejected.
    """
    a = values.values if isinstance(values, DisparityMap) else np.asarray(values)
    a = a.astype(np.float32)
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[:, :, 0]
    if a.ndim == 2:
        tag = b"Pf"
    elif a.ndim == 3 and a.shape[2] == 3:
        tag = b"PF"
    else:
        raise ValueError(f"PFM supports (H, W) or (H, W, 3) rasters, got {a.shape}")
    nan_idx = np.argwhere(np.isnan(a))
    if nan_idx.size:
        first = tuple(int(v) for v in nan_idx[0])
        raise ValueError(f"raster contains NaN, first at index {first}")
    h, w = a.shape[0], a.shape[1]
    with open(path, "wb") as f:
        f.write(tag + b"\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(f"{-abs(scale):.6f}\n".encode("ascii"))  # negative = little-endian
        f.write(np.flipud(a).astype("<f4").tobytes())


def read_pfm(path: str | Path) -> np.ndarray:
    """Read a PFM file; returns float32 (H, W) or (H, W, 3)."""
    try:
        with open(path, "rb") as f:
            tag = f.readline().strip()
            if tag not in (b"Pf", b"PF"):
                raise ValueError(f"{path}: not a PFM file (tag {tag!r})")
            dims = f.readline().split()
            if len(dims) != 2:
                raise ValueError(f"{path}: malformed PFM dimension line")
            w, h = int(dims[0]), int(dims[1])
            if w < 1 or h < 1:
                raise ValueError(f"{path}: bad PFM dimensions {w}x{h}")
            scale = float(f.readline().strip())
            channels = 3 if tag == b"PF" else 1
            count = w * h * channels
            buf = f.read(count * 4)
            if len(buf) != count * 4:
                raise ValueError(f"{path}: truncated PFM payload")
            dt = "<f4" if scale < 0 else ">f4"
            a = np.frombuffer(buf, dtype=dt).astype(np.float32)
    except OSError as e:
        raise ValueError(f"cannot read PFM {path}: {e}") from e
    a = a.reshape((h, w, channels)) if channels == 3 else a.reshape((h, w))
    return np.flipud(a).copy()


def _jsonable(obj):
    """Make floats JSON-safe: non-finite values become strings."""
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float):
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        if math.isnan(obj):
            return "nan"
        return obj
    if isinstance(obj, (np.floating,)):
        return _jsonable(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def dump_json(obj, path: str | Path) -> None:
    """Deterministic JSON document: sorted keys, no timestamps, LF newline."""
    with open(path, "w", encoding="utf-8") as f:
        json.dump(_jsonable(obj), f, sort_keys=True, indent=2)
        f.write("\n")


def dumps_json(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True)


def write_jsonl(rows, path: str | Path) -> int:
    """One JSON object per line, sorted keys. Every row must carry a
    "schema" field. Returns the number of rows written."""
    n = 0
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            if not isinstance(row, dict) or "schema" not in row:
                raise ValueError(f"JSONL row {n + 1} is missing the schema field")
            f.write(json.dumps(_jsonable(row), sort_keys=True))
            f.write("\n")
            n += 1
    return n


def read_jsonl(path: str | Path) -> list[dict]:
    """Parse a JSONL file; parse failures report the line number. Unknown
    fields are preserved verbatim."""
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}: line {lineno}: invalid JSON ({e.msg})") from e
            if not isinstance(row, dict) or "schema" not in row:
                raise ValueError(f"{path}: line {lineno}: missing schema field")
            rows.append(row)
    return rows
