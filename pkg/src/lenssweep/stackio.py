"""On-disk bokeh stack directories.

A stack directory holds the all-in-focus reference, one image per
strength, and a stack.json manifest. Optional float dumps sit next to
the 8-bit images for precision-sensitive consumers; readers prefer them
when listed.
"""

from __future__ import annotations

import json
from pathlib import Path

from . import io_formats
from .raster import DISPLAY_GAMMA, LINEAR, RasterImage, decode_gamma, encode_gamma
from .renderer import BokehStack

STACK_SCHEMA = "lenssweep/stack/v1"


def save_stack(stack: BokehStack, out_dir: str | Path, float_dumps: bool = False) -> dict:
    """Write a stack directory; returns the manifest document."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    gamma = float(stack.provenance.get("gamma", 2.2))

    def _write(img: RasterImage, name: str) -> dict:
        entry = {"image": f"{name}.png"}
        if img.colorspace == DISPLAY_GAMMA:
            display = img
        else:
            display = RasterImage(encode_gamma(img.samples, gamma), colorspace=DISPLAY_GAMMA)
        io_formats.write_png8(display, out / entry["image"])
        if float_dumps:
            linear = img.samples if img.colorspace == LINEAR else decode_gamma(img.samples, gamma)
            entry["pfm"] = f"{name}.pfm"
            io_formats.write_pfm(
                linear[:, :, :3] if linear.shape[2] >= 3 else linear[:, :, 0], out / entry["pfm"]
            )
        return entry

    manifest = {
        "schema": STACK_SCHEMA,
        "focus_disparity": stack.focus_disparity,
        "reference": _write(stack.reference, "reference"),
        "frames": [],
        "provenance": stack.provenance,
    }
    for i, (k, img) in enumerate(stack.frames):
        entry = _write(img, f"frame_{i:02d}_k{k:.3f}")
        entry["k"] = k
        manifest["frames"].append(entry)
    io_formats.dump_json(manifest, out / "stack.json")
    return manifest


def _load_entry(stack_dir: Path, entry: dict) -> RasterImage:
    if "pfm" in entry:
        values = io_formats.read_pfm(stack_dir / entry["pfm"])
        return RasterImage(values, colorspace=LINEAR)
    return io_formats.read_png8(stack_dir / entry["image"])


def load_stack(stack_dir: str | Path) -> tuple[BokehStack, dict]:
    """Read a stack directory; returns (stack, manifest)."""
    stack_dir = Path(stack_dir)
    manifest_path = stack_dir / "stack.json"
    try:
        with open(manifest_path, "r", encoding="utf-8") as f:
            manifest = json.load(f)
    except OSError as e:
        raise ValueError(f"cannot read stack manifest {manifest_path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ValueError(f"{manifest_path}: invalid JSON: {e.msg}") from e
    if manifest.get("schema") != STACK_SCHEMA:
        raise ValueError(f"{manifest_path}: schema is not {STACK_SCHEMA}")
    reference = _load_entry(stack_dir, manifest["reference"])
    frames = [(float(e["k"]), _load_entry(stack_dir, e)) for e in manifest["frames"]]
    stack = BokehStack(
        reference=reference,
        frames=frames,
        focus_disparity=float(manifest.get("focus_disparity", 0.0)),
        provenance=manifest.get("provenance", {}),
    )
    return stack, manifest


def load_bench_scene_stack(root: str | Path, scene_id: str | None = None) -> tuple[BokehStack, dict]:
    """Assemble a stack from a generated benchmark tree.

    With no scene_id the tree must contain exactly one scene. The second
    return value carries the shared scene metadata (d_f, defocus scale,
    gamma, depth path).
    """
    root = Path(root)
    metas = []
    for p in sorted((root / "metadata").glob("*.json")):
        with open(p, "r", encoding="utf-8") as f:
            metas.append(json.load(f))
    if not metas:
        raise ValueError(f"no metadata records under {root}")
    scene_ids = sorted({m["scene_id"] for m in metas})
    if scene_id is None:
        if len(scene_ids) != 1:
            raise ValueError(
                f"benchmark holds {len(scene_ids)} scenes; pass an explicit scene id"
            )
        scene_id = scene_ids[0]
    group = sorted((m for m in metas if m["scene_id"] == scene_id), key=lambda m: m["k"])
    if not group:
        raise ValueError(f"scene {scene_id!r} not found (have {scene_ids})")
    head = group[0]
    reference = io_formats.read_png8(root / head["aif"])
    frames = [(float(m["k"]), io_formats.read_png8(root / m["image"])) for m in group]
    stack = BokehStack(
        reference=reference,
        frames=frames,
        focus_disparity=float(head["d_f"]),
        provenance={
            "gamma": head.get("gamma", 2.2),
            "defocus_scale": head.get("defocus_scale", 1.0),
            "scene_id": scene_id,
            "seed": head.get("seed"),
        },
    )
    meta = {
        "d_f": float(head["d_f"]),
        "defocus_scale": float(head.get("defocus_scale", 1.0)),
        "gamma": float(head.get("gamma", 2.2)),
        "depth": str(root / head["depth"]),
        "scene_id": scene_id,
    }
    return stack, meta
