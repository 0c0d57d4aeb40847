"""Single binary wiring the pipeline into reproducible subcommands.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
Human-readable output goes to stderr; machine reports are JSON on stdout
(and to files when flags ask for them). Every run resolves its full
configuration into a manifest sufficient to reproduce it.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, benchgen, calib, dfd, io_formats, metrics, stackio
from .benchgen import BenchmarkPolicy
from .raster import DISPLAY_GAMMA, LINEAR, RasterImage, decode_gamma, encode_gamma
from .renderer import BokehStack, RenderParams, blur_layer, render_bokeh
from .scene import load_scene

log = logging.getLogger("lenssweep")

MANIFEST_SCHEMA = "lenssweep/manifest/v1"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3

_INTERNAL_KEYS = {"func", "config", "manifest", "manifest_only"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON file of flag defaults (explicit flags win)")
    p.add_argument("--manifest", help="write the resolved run manifest to this path")
    p.add_argument(
        "--manifest-only",
        action="store_true",
        help="print the resolved manifest to stdout and exit without executing",
    )
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="worker pool size")


def _manifest(args, inputs: list[str], outputs: list[str], wall_time_s: float | None) -> dict:
    config = {
        k: v for k, v in sorted(vars(args).items()) if k not in _INTERNAL_KEYS and k != "subcommand"
    }
    return {
        "schema": MANIFEST_SCHEMA,
        "subcommand": args.subcommand,
        "version": __version__,
        "config": config,
        "seed": config.get("seed"),
        "inputs": inputs,
        "outputs": outputs,
        "wall_time_s": wall_time_s,
    }


def _emit_report(report: dict, path: str | None):
    text = io_formats.dumps_json(report)
    print(text)
    if path:
        io_formats.dump_json(report, path)


def _parse_ks(text: str) -> list[float]:
    try:
        ks = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise UsageError(f"--ks expects comma-separated numbers, got {text!r}") from e
    if not ks:
        raise UsageError("--ks is empty")
    return ks


def _load_eval_image(path: str, assume_linear: bool, gamma: float) -> RasterImage:
    p = Path(path)
    if p.suffix.lower() == ".pfm":
        return RasterImage(io_formats.read_pfm(p), colorspace=LINEAR)
    img = io_formats.read_png8_or_jpeg(p)
    if assume_linear:
        return RasterImage(img.samples, colorspace=LINEAR)
    s = img.samples.copy()
    ncol = 3 if img.channels == 4 else img.channels
    s[:, :, :ncol] = decode_gamma(s[:, :, :ncol], gamma)
    return RasterImage(s, colorspace=LINEAR)


def _crop_rect(img: RasterImage, rect: str | None) -> RasterImage:
    if not rect:
        return img
    try:
        x, y, w, h = (int(v) for v in rect.split(","))
    except ValueError as e:
        raise UsageError(f"--crop expects x,y,w,h integers, got {rect!r}") from e
    if x < 0 or y < 0 or w < 1 or h < 1 or x + w > img.width or y + h > img.height:
        raise ValueError(f"crop {rect} outside the {img.width}x{img.height} raster")
    return RasterImage(img.samples[y : y + h, x : x + w], colorspace=img.colorspace)


# ----------------------------------------------------------------- gen-bench


def cmd_gen_bench(args) -> dict:
    policy = BenchmarkPolicy(
        canvas_px=(args.frame_px, args.frame_px),
        margin_px=args.margin_px,
        n_k_per_scene=args.ks_per_scene,
        k_range=(args.k_lo, args.k_hi),
        fnumber_range=(args.n_lo, args.n_hi),
        quality_taps=args.taps,
        seed=args.seed,
    )
    records = benchgen.generate_benchmark(
        args.fg_dir,
        args.bg_dir,
        args.out,
        policy,
        n_scenes=args.scenes,
        jpeg=args.jpeg,
        jobs=args.jobs,
    )
    return {
        "schema": "lenssweep/report/gen-bench/v1",
        "out": str(args.out),
        "scenes": len(records),
        "bokeh_images": sum(len(r.bokeh) for r in records),
    }


# -------------------------------------------------------------------- render


def cmd_render(args) -> dict:
    sc = load_scene(args.scene)
    params = RenderParams(
        k=args.k,
        focus_disparity=args.df,
        defocus_scale=args.s,
        gamma=args.gamma,
        quality_taps=args.taps,
        max_radius_px=args.max_radius_px,
    )
    img = render_bokeh(sc, params)
    io_formats.write_png8(img, args.out)
    outputs = [args.out]
    if args.linear_out:
        linear = render_bokeh(sc, params, output_colorspace=LINEAR)
        io_formats.write_pfm(linear.samples, args.linear_out)
        outputs.append(args.linear_out)
    return {"schema": "lenssweep/report/render/v1", "out": outputs, "k": args.k, "d_f": args.df}


# --------------------------------------------------------------------- stack


def cmd_stack(args) -> dict:
    ks = _parse_ks(args.ks)
    if any(k <= 0 for k in ks) or any(b <= a for a, b in zip(ks, ks[1:])):
        raise ValueError("--ks must be strictly increasing positive values")
    aif = io_formats.read_image_linear(args.aif, gamma=args.gamma)
    disparity = io_formats.read_pfm(args.disparity)
    if disparity.ndim != 2:
        raise ValueError("disparity must be a single-channel PFM")
    if disparity.shape != (aif.height, aif.width):
        raise ValueError("disparity and image dimensions disagree")
    frames = []
    for k in ks:
        rmap = k * np.abs(disparity.astype(np.float64) - args.df) / args.s
        blurred = blur_layer(
            aif.rgb(), rmap, taps=args.taps, mode="mirror", max_radius_px=args.max_radius_px
        )
        frames.append(
            (k, RasterImage(encode_gamma(np.clip(blurred, 0, 1), args.gamma), colorspace=DISPLAY_GAMMA))
        )
    reference = RasterImage(encode_gamma(aif.rgb(), args.gamma), colorspace=DISPLAY_GAMMA)
    stack = BokehStack(
        reference=reference,
        frames=frames,
        focus_disparity=args.df,
        provenance={
            "gamma": args.gamma,
            "defocus_scale": args.s,
            "quality_taps": args.taps,
            "source_aif": str(args.aif),
            "source_disparity": str(args.disparity),
            "layering": "single-layer (no occlusion handling)",
        },
    )
    manifest = stackio.save_stack(stack, args.out, float_dumps=args.float_dumps)
    return {
        "schema": "lenssweep/report/stack/v1",
        "out": str(args.out),
        "ks": ks,
        "frames": len(manifest["frames"]),
    }


# --------------------------------------------------------------- sweep-depth


def cmd_sweep_depth(args) -> dict:
    stack_dir = Path(args.stack_dir)
    scene_meta = None
    if (stack_dir / "stack.json").is_file():
        stack, manifest = stackio.load_stack(stack_dir)
        d_f = float(manifest.get("focus_disparity", 0.0))
        s = float(manifest.get("provenance", {}).get("defocus_scale", 1.0))
    elif (stack_dir / "metadata").is_dir():
        stack, scene_meta = stackio.load_bench_scene_stack(stack_dir, args.scene)
        d_f = scene_meta["d_f"]
        s = scene_meta["defocus_scale"]
    else:
        raise ValueError(f"{stack_dir} is neither a stack directory nor a benchmark root")

    options = dfd.SweepOptions(
        window_px=args.window_px,
        grid_step_px=args.grid_step_px,
        r_max_px=args.r_max_px,
        texture_threshold=args.texture_threshold,
        border_px=args.border_px,
        sign_policy=args.sign,
        s1_m=args.s1_m,
    )
    est = dfd.sweep_depth(stack, options)

    if args.sign_map:
        sign = io_formats.read_pfm(args.sign_map)
        if sign.shape != est.delta_hat.shape:
            raise ValueError("sign map dimensions disagree with the stack")
        out_map = dfd.disparity_from_delta(est.delta_hat, d_f, sign, defocus_scale=s)
        kind = "disparity"
    elif args.sign in ("front", "behind"):
        out_map = est.depth_m
        kind = "depth_m"
    else:
        out_map = est.delta_hat
        kind = "delta"
    io_formats.write_pfm(np.asarray(out_map, dtype=np.float32), args.out)

    report = {
        "schema": "lenssweep/report/sweep-depth/v1",
        "out": str(args.out),
        "kind": kind,
        "valid_fraction": float(np.mean(est.valid_mask)),
        "m_frames": est.m_frames,
        "sum_k_sq": est.sum_k_sq,
        "provenance": est.provenance,
    }
    gt_path = args.gt
    if gt_path is None and scene_meta is not None:
        gt_path = scene_meta["depth"]
    if gt_path and kind == "disparity":
        gt = io_formats.read_pfm(gt_path)
        mask = est.valid_mask & (gt > 0)
        if mask.any():
            rel = np.abs(np.asarray(out_map)[mask] - gt[mask]) / gt[mask]
            report["median_relative_error"] = float(np.median(rel))
            report["gt"] = str(gt_path)
    return report


# ----------------------------------------------------------------- calibrate


def cmd_calibrate(args) -> dict:
    defaults = {"focal_mm": args.focal_mm, "sensor_mm": args.sensor_mm, "crop": args.crop}
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    rows = list(
        calib.harmonize_dataset(
            args.dataset,
            args.root,
            defaults=defaults,
            exif_dir=args.exif_json,
            derived_dir=out.parent / "derived",
        )
    )
    n = io_formats.write_jsonl(rows, out)
    trailer = rows[-1] if rows and rows[-1].get("trailer") else {}
    return {
        "schema": "lenssweep/report/calibrate/v1",
        "out": str(out),
        "rows": trailer.get("rows", n - 1),
        "skipped": trailer.get("skipped", 0),
    }


# ---------------------------------------------------------------- eval-bokeh


def cmd_eval_bokeh(args) -> dict:
    pred = _crop_rect(_load_eval_image(args.pred, args.assume_linear, args.gamma), args.crop)
    gt = _crop_rect(_load_eval_image(args.gt, args.assume_linear, args.gamma), args.crop)
    rep = metrics.bokeh_quality(pred.rgb(), gt.rgb(), peak=args.peak)
    return {
        "schema": "lenssweep/report/eval-bokeh/v1",
        "psnr_db": rep.psnr_db,
        "ssim": rep.ssim,
        "n_pixels": rep.n_pixels,
        "lpips": None,
        "dists": None,
    }


# ---------------------------------------------------------------- eval-depth


def cmd_eval_depth(args) -> dict:
    pred = io_formats.read_pfm(args.pred)
    gt = io_formats.read_pfm(args.gt)
    mask = None
    if args.mask:
        mask = io_formats.read_pfm(args.mask) > 0.5
    rep = metrics.depth_metrics(pred, gt, valid_mask=mask)
    return {
        "schema": "lenssweep/report/eval-depth/v1",
        "abs_rel": rep.abs_rel,
        "sq_rel": rep.sq_rel,
        "rmse": rep.rmse,
        "rmse_log": rep.rmse_log,
        "log10": rep.log10,
        "delta1": rep.delta1,
        "delta2": rep.delta2,
        "delta3": rep.delta3,
        "n_valid": rep.n_valid,
        "n_nonpositive_pred": rep.n_nonpositive_pred,
    }


# ------------------------------------------------------------- validate-bench


def cmd_validate_bench(args) -> dict:
    summary = benchgen.validate_benchmark(args.root)
    summary["schema"] = "lenssweep/report/validate-bench/v1"
    return summary


# -------------------------------------------------------------------- parser


def build_parser(config_defaults: dict | None = None, config_for: str | None = None) -> _Parser:
    parser = _Parser(prog="lenssweep", description=__doc__)
    parser.add_argument("--version", action="version", version=f"lenssweep {__version__}")
    subs = parser.add_subparsers(dest="subcommand", required=True)
    sub_map: dict[str, argparse.ArgumentParser] = {}

    def sub(name, func, help_text):
        p = subs.add_parser(name, help=help_text)
        _add_common(p)
        p.set_defaults(func=func, subcommand=name)
        sub_map[name] = p
        return p

    p = sub("gen-bench", cmd_gen_bench, "generate a synthetic bokeh benchmark tree")
    p.add_argument("--fg-dir", required=True, help="directory of RGBA PNG foreground mattes")
    p.add_argument("--bg-dir", required=True, help="directory of PNG/JPEG backgrounds")
    p.add_argument("--out", required=True)
    p.add_argument("--scenes", type=int, default=None, help="default: one per fg x bg pair")
    p.add_argument("--ks-per-scene", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frame-px", type=int, default=1024, help="final frame side length")
    p.add_argument("--margin-px", type=int, default=64)
    p.add_argument("--k-lo", type=float, default=5.0)
    p.add_argument("--k-hi", type=float, default=25.0)
    p.add_argument("--n-lo", type=float, default=1.4, help="f-number range low end")
    p.add_argument("--n-hi", type=float, default=22.0, help="f-number range high end")
    p.add_argument("--taps", type=int, default=8)
    p.add_argument("--jpeg", action="store_true", help="store bokeh images as JPEG")

    p = sub("render", cmd_render, "render one bokeh image from a scene JSON")
    p.add_argument("--scene", required=True, help="scene JSON document")
    p.add_argument("--k", type=float, required=True)
    p.add_argument("--df", type=float, required=True, help="focus disparity in [0, 1]")
    p.add_argument("--s", type=float, default=1.0, help="defocus scale divisor")
    p.add_argument("--gamma", type=float, default=2.2)
    p.add_argument("--taps", type=int, default=8)
    p.add_argument("--max-radius-px", type=float, default=64.0)
    p.add_argument("--out", required=True, help="display-gamma PNG")
    p.add_argument("--linear-out", default=None, help="optional linear PFM dump")

    p = sub("stack", cmd_stack, "render a bokeh stack from an all-in-focus image + disparity")
    p.add_argument("--aif", required=True, help="all-in-focus PNG (display gamma)")
    p.add_argument("--disparity", required=True, help="single-channel PFM, normalized disparity")
    p.add_argument("--ks", required=True, help="comma-separated ascending strengths")
    p.add_argument("--df", type=float, required=True)
    p.add_argument("--s", type=float, default=1.0)
    p.add_argument("--gamma", type=float, default=2.2)
    p.add_argument("--taps", type=int, default=8)
    p.add_argument("--max-radius-px", type=float, default=64.0)
    p.add_argument("--float-dumps", action="store_true", help="also write linear PFM frames")
    p.add_argument("--out", required=True, help="stack directory")

    p = sub("sweep-depth", cmd_sweep_depth, "recover depth from a bokeh stack")
    p.add_argument("--stack-dir", required=True, help="stack directory or benchmark root")
    p.add_argument("--scene", default=None, help="scene id when the stack dir is a benchmark root")
    p.add_argument("--out", required=True, help="output PFM")
    p.add_argument("--report", default=None, help="write the JSON report here too")
    p.add_argument("--sign", choices=["front", "behind", "none"], default="none")
    p.add_argument("--s1-m", type=float, default=None, help="focus distance for metric inversion")
    p.add_argument("--sign-map", default=None, help="PFM of per-pixel signs for disparity output")
    p.add_argument("--gt", default=None, help="ground-truth PFM for the report")
    p.add_argument("--window-px", type=int, default=21)
    p.add_argument("--grid-step-px", type=float, default=0.25)
    p.add_argument("--r-max-px", type=float, default=32.0)
    p.add_argument("--texture-threshold", type=float, default=1e-4)
    p.add_argument(
        "--border-px",
        type=int,
        default=0,
        help="drop this many edge pixels from the valid set (use for cropped renders)",
    )

    p = sub("calibrate", cmd_calibrate, "harmonize camera metadata into JSONL rows")
    p.add_argument("--dataset", choices=["dpdd", "aperture", "blb"], required=True)
    p.add_argument("--root", required=True)
    p.add_argument("--exif-json", default=None, help="directory of per-image EXIF tag dumps")
    p.add_argument("--out", required=True, help="output JSONL")
    p.add_argument("--focal-mm", type=float, default=50.0)
    p.add_argument("--sensor-mm", type=float, default=36.0)
    p.add_argument("--crop", type=float, default=1.0)

    p = sub("eval-bokeh", cmd_eval_bokeh, "PSNR/SSIM between two images")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--report", default=None)
    p.add_argument("--crop", default=None, help="x,y,w,h valid field of view")
    p.add_argument("--assume-linear", action="store_true")
    p.add_argument("--gamma", type=float, default=2.2)
    p.add_argument("--peak", type=float, default=1.0)

    p = sub("eval-depth", cmd_eval_depth, "depth error metrics between two PFM rasters")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--mask", default=None, help="PFM, valid where > 0.5")
    p.add_argument("--report", default=None)

    p = sub("validate-bench", cmd_validate_bench, "validate a generated benchmark tree")
    p.add_argument("--root", required=True)

    if config_defaults and config_for in sub_map:
        sp = sub_map[config_for]
        known = {a.dest for a in sp._actions}
        unknown = set(config_defaults) - known
        if unknown:
            raise UsageError(f"--config holds unknown keys: {sorted(unknown)}")
        sp.set_defaults(**config_defaults)
        for action in sp._actions:
            if action.dest in config_defaults:
                action.required = False

    return parser


def _prescan(argv: list[str]) -> tuple[str | None, str | None]:
    """Find the subcommand and any --config path before strict parsing."""
    config = None
    sub = None
    it = iter(range(len(argv)))
    for i in it:
        tok = argv[i]
        if tok == "--config" and i + 1 < len(argv):
            config = argv[i + 1]
        elif tok.startswith("--config="):
            config = tok.split("=", 1)[1]
        elif sub is None and not tok.startswith("-"):
            sub = tok
    return sub, config


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        sub, config_path = _prescan(argv)
        cfg = None
        if config_path:
            try:
                with open(config_path, "r", encoding="utf-8") as f:
                    cfg = json.load(f)
            except (OSError, json.JSONDecodeError) as e:
                raise UsageError(f"cannot read --config {config_path}: {e}") from e
            if not isinstance(cfg, dict):
                raise UsageError("--config must hold a JSON object")
        args = build_parser(config_defaults=cfg, config_for=sub).parse_args(argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE

    try:
        if args.manifest_only:
            manifest = _manifest(args, inputs=[], outputs=[], wall_time_s=None)
            print(io_formats.dumps_json(manifest))
            return EXIT_OK
        t0 = time.monotonic()
        report = args.func(args)
        wall = time.monotonic() - t0
        manifest = _manifest(args, inputs=[], outputs=[], wall_time_s=wall)
        if args.manifest:
            io_formats.dump_json(manifest, args.manifest)
        log.info("manifest: %s", io_formats.dumps_json(manifest))
        _emit_report(report, getattr(args, "report", None))
        return EXIT_OK
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, KeyError, OSError, RuntimeError, json.JSONDecodeError) as e:
        log.error("%s", e)
        return EXIT_DATA
    except Exception:  # pragma: no cover - defensive
        import traceback

        traceback.print_exc(file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
