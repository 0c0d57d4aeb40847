"""Quantitative acceptance gates for the whole pipeline.

Each test prints one [PASS]/[FAIL] line (run pytest with -s to see them
all). Tolerances are pinned here, not tuned at runtime.
"""

import json
import math
import time

import numpy as np
import pytest
from scipy.signal import convolve2d as scipy_convolve2d

from conftest import disk_matte, make_layered_scene, noise_rgb, rng_for, write_asset_dirs
from lenssweep import io_formats, optics
from lenssweep.benchgen import BenchmarkPolicy, build_scene, scene_rng
from lenssweep.calib import harmonize_dataset
from lenssweep.cli import main as cli_main
from lenssweep.dfd import (
    SweepOptions,
    edge_exclusion_mask,
    invert_depth,
    ols_slope,
    measure_blur_radius,
    sweep_depth,
    variance_proxy,
)
from lenssweep.metrics import depth_metrics, psnr, ssim
from lenssweep.raster import LINEAR, RasterImage, center_crop, to_linear
from lenssweep.renderer import RenderParams, pillbox_kernel, render_bokeh, render_stack
from lenssweep.scene import PlanarDisparity, composite_scene


def _report(name: str, ok: bool, detail: str):
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


# ---------------------------------------------------------------- criterion 1


def test_criterion_1_sweep_exactness_noiseless():
    """Per-pixel slope recovery on 10 seeded 128x128 scenes, m=5 strengths."""
    t0 = time.monotonic()
    policy = BenchmarkPolicy(
        canvas_px=(128, 128), margin_px=32, k_range=(4.0, 20.0), quality_taps=16, seed=11
    )
    ks = [4.0, 8.0, 12.0, 16.0, 20.0]
    opts = SweepOptions(window_px=13, grid_step_px=0.125, r_max_px=18.0, border_px=14)
    rel_all = []
    for idx in range(10):
        rng = scene_rng(policy.seed, idx)
        fg = RasterImage(disk_matte(rng, 72, radius_frac=0.35), colorspace=LINEAR)
        bg = RasterImage(noise_rgb(rng, 256, 256), colorspace=LINEAR)
        scene = build_scene(rng, fg, bg, policy)
        d_f = float(rng.uniform(*scene.foreground_plane.corner_range()))
        stack = render_stack(scene, ks, d_f, quality_taps=policy.quality_taps)
        _, disparity = composite_scene(scene)

        alpha = center_crop(scene.foreground_alpha_canvas(), scene.final_crop_px)
        excl = edge_exclusion_mask(alpha, margin_px=opts.window_px)
        est = sweep_depth(stack, opts, exclude_mask=excl)

        d_true = np.abs(disparity.values.astype(np.float64) - d_f)
        r_true = max(ks) * d_true
        sel = est.valid_mask & (r_true >= 1.0) & (r_true <= 16.0)
        rel_all.append(np.abs(est.delta_hat[sel] - d_true[sel]) / d_true[sel])
    rel = np.concatenate(rel_all)
    elapsed = time.monotonic() - t0
    med = float(np.median(rel))
    p95 = float(np.percentile(rel, 95))
    ok = med < 0.02 and p95 < 0.05 and elapsed < 60.0
    _report(
        "criterion 1 (sweep exactness)",
        ok,
        f"median={med:.4f} (<0.02), p95={p95:.4f} (<0.05), "
        f"n={rel.size}, {elapsed:.1f}s (<60s)",
    )


# ---------------------------------------------------------------- criterion 2


def test_criterion_2_unbiasedness_monte_carlo():
    t0 = time.monotonic()
    rng = rng_for(202)
    ks = np.array([5.0, 10.0, 15.0, 20.0])
    delta, sigma, trials = 0.4, 0.2, 1000
    estimates = []
    for _ in range(trials):
        r = ks * delta + rng.normal(0.0, sigma, size=ks.size)
        estimates.append(ols_slope(ks, r)[0])
    vp = float(variance_proxy(ks, np.full(ks.size, sigma**2)))
    bound = 3.0 * math.sqrt(vp / trials)
    err = abs(float(np.mean(estimates)) - delta)
    elapsed = time.monotonic() - t0
    ok = err < bound and elapsed < 5.0
    _report(
        "criterion 2 (unbiasedness)",
        ok,
        f"|mean-0.4|={err:.2e} < {bound:.2e}, {elapsed:.2f}s (<5s)",
    )


# ---------------------------------------------------------------- criterion 3


def test_criterion_3_variance_law():
    t0 = time.monotonic()
    rng = rng_for(303)
    ks1 = np.array([5.0, 10.0, 15.0, 20.0])
    ks2 = 2.0 * ks1  # sum K^2 exactly 4x larger
    delta, sigma, trials = 0.4, 0.2, 2000
    est1 = np.empty(trials)
    est2 = np.empty(trials)
    for i in range(trials):
        est1[i] = ols_slope(ks1, ks1 * delta + rng.normal(0, sigma, 4))[0]
        est2[i] = ols_slope(ks2, ks2 * delta + rng.normal(0, sigma, 4))[0]
    ratio = float(np.var(est1) / np.var(est2))
    elapsed = time.monotonic() - t0
    ok = abs(ratio - 4.0) / 4.0 < 0.20 and elapsed < 10.0
    _report(
        "criterion 3 (variance law)",
        ok,
        f"Var ratio={ratio:.2f} (4x +-20%), {elapsed:.2f}s (<10s)",
    )


# ---------------------------------------------------------------- criterion 4


def _background_only_scene(d_bg: float, frame_px=96, margin_px=24, seed=41):
    sc = make_layered_scene(
        seed=seed,
        frame_px=frame_px,
        margin_px=margin_px,
        bg_plane=PlanarDisparity(0, 0, d_bg),
        fg_plane=PlanarDisparity(0, 0, 0.9),
    )
    fg = sc.foreground.samples.copy()
    fg[:, :, 3] = 0.0
    from lenssweep.scene import LayeredScene

    return LayeredScene(
        background=sc.background,
        background_plane=sc.background_plane,
        foreground=RasterImage(fg, colorspace=LINEAR),
        foreground_plane=sc.foreground_plane,
        placement=sc.placement,
        canvas_px=sc.canvas_px,
        final_crop_px=sc.final_crop_px,
    )


def test_criterion_4_linear_defocus_law():
    d_bg, d_f = 0.3, 0.8  # offset 0.5, so radii are k/2
    sc = _background_only_scene(d_bg)
    ks = [2.0, 4.0, 8.0, 16.0]
    stack = render_stack(sc, ks, d_f, quality_taps=16)
    ref = to_linear(stack.reference)
    medians = []
    for k, frame in stack.frames:
        m = measure_blur_radius(
            ref, to_linear(frame), window_px=13, grid_step_px=0.0625, r_max_px=10.0
        )
        inner = m.valid_mask.copy()
        inner[:12, :] = inner[-12:, :] = inner[:, :12] = inner[:, -12:] = False
        medians.append(float(np.median(m.r_hat[inner])))
    k_arr, r_arr = np.array(ks), np.array(medians)
    slope = float(np.sum(k_arr * r_arr) / np.sum(k_arr**2))
    ss_res = float(np.sum((r_arr - slope * k_arr) ** 2))
    ss_tot = float(np.sum((r_arr - r_arr.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot
    slope_err = abs(slope - 0.5) / 0.5
    ok = r2 > 0.999 and slope_err < 0.02
    _report(
        "criterion 4 (linear defocus law)",
        ok,
        f"R^2={r2:.5f} (>0.999), slope={slope:.4f} vs 0.5 ({slope_err:.3%} < 2%)",
    )


# ---------------------------------------------------------------- criterion 5


def test_criterion_5_pinhole_identity():
    from lenssweep.raster import encode_gamma

    worst = 0.0
    for seed in range(20):
        sc = make_layered_scene(seed=seed, frame_px=48, margin_px=8)
        out = render_bokeh(sc, RenderParams(k=0.0, focus_disparity=0.5))
        aif, _ = composite_scene(sc)
        expected = encode_gamma(aif.samples, 2.2)
        worst = max(worst, float(np.abs(out.samples - expected).max()))
    ok = worst <= 1.0 / 255.0
    _report("criterion 5 (pinhole identity)", ok, f"max|diff|={worst:.2e} <= 1/255 on 20 scenes")


# ---------------------------------------------------------------- criterion 6


def test_criterion_6_renderer_vs_dense_convolution():
    worst = 0.0
    for radius in (1.0, 3.5, 8.0):
        d_bg, d_f = 0.3, 0.8
        sc = _background_only_scene(d_bg, frame_px=64, margin_px=16, seed=17)
        k = radius / abs(d_bg - d_f)
        out = render_bokeh(
            sc, RenderParams(k=k, focus_disparity=d_f, quality_taps=8), output_colorspace=LINEAR
        )
        kern = np.asarray(pillbox_kernel(radius))
        half = kern.shape[0] // 2
        bg = sc.background.samples.astype(np.float64)
        expected = np.empty_like(bg)
        for c in range(3):
            padded = np.pad(bg[:, :, c], half, mode="symmetric")
            expected[:, :, c] = scipy_convolve2d(padded, kern, mode="valid")
        expected = center_crop(expected, sc.final_crop_px)
        worst = max(worst, float(np.abs(out.samples.astype(np.float64) - expected).max()))
    ok = worst < 1e-4
    _report("criterion 6 (renderer vs oracle)", ok, f"max|diff|={worst:.2e} < 1e-4 for r in {{1, 3.5, 8}}")


# ---------------------------------------------------------------- criterion 7


def test_criterion_7_optics_identities():
    rng = rng_for(707)
    worst_identity = 0.0
    worst_dof = 0.0
    worst_depth = 0.0
    for _ in range(1000):
        f = rng.uniform(10, 200)
        n = rng.uniform(1.0, 22.0)
        s1 = rng.uniform(f / 1000.0 * 1.2, 50.0)
        sensor = rng.uniform(5, 60)
        lens = optics.LensConfig(f, n, s1, sensor, 1000, 1000)
        s2 = rng.uniform(0.05, 100.0)

        lhs = 2.0 * optics.bokeh_strength_k(lens, 512) * abs(1.0 / (s1 * 1e3) - 1.0 / (s2 * 1e3))
        rhs = optics.coc_diameter_mm(lens, s2) * optics.pixel_ratio(lens, 512)
        if rhs > 0:
            worst_identity = max(worst_identity, abs(lhs - rhs) / rhs)

        if abs(s2 - s1) > 1e-6 * s1:
            limit = optics.coc_diameter_mm(lens, s2)
            b = optics.dof_bounds(lens, limit)
            target = b.far_m if s2 > s1 else b.near_m
            if math.isfinite(target):
                worst_dof = max(worst_dof, abs(target - s2) / s2)

        delta = abs(1.0 / s1 - 1.0 / s2)
        sign = "front" if s2 < s1 else "behind"
        worst_depth = max(worst_depth, abs(invert_depth(delta, s1, sign) - s2) / s2)
    ok = worst_identity < 1e-12 and worst_dof < 1e-9 and worst_depth < 1e-12
    _report(
        "criterion 7 (optics identities)",
        ok,
        f"radius identity {worst_identity:.1e} (<1e-12), dof inversion {worst_dof:.1e} (<1e-9), "
        f"depth round trip {worst_depth:.1e} (<1e-12), 1000 configs",
    )


# ---------------------------------------------------------------- criterion 8


def test_criterion_8_metrics_ground_truth():
    from test_metrics import ssim_direct_oracle

    checks = []
    a0 = np.zeros((16, 16))
    checks.append(math.isinf(psnr(a0, a0)))
    checks.append(abs(psnr(a0, np.full_like(a0, 0.1)) - 20.0) < 1e-12)
    checks.append(abs(psnr(a0, np.ones_like(a0)) - 0.0) < 1e-12)

    rng = rng_for(808)
    x = rng.random((20, 20))
    checks.append(abs(ssim(x, x) - 1.0) < 1e-9)
    hi = (rng.random((20, 20)) > 0.5).astype(np.float64)
    inv = 1.0 - hi
    checks.append(ssim(hi, inv) < 0.5)
    checks.append(abs(ssim(hi, inv) - ssim_direct_oracle(hi, inv)) < 1e-6)
    shifted = 0.8 * x
    checks.append(abs(ssim(shifted, shifted + 0.1) - ssim_direct_oracle(shifted, shifted + 0.1)) < 1e-6)

    gt = rng.random((12, 12)) + 0.5
    rep = depth_metrics(gt, gt)
    checks.append(rep.abs_rel == 0 and rep.delta1 == 1.0)
    rep = depth_metrics(1.1 * gt, gt)
    checks.append(abs(rep.abs_rel - 0.1) < 1e-9 and rep.delta1 == 1.0)
    rep = depth_metrics(1.3 * gt, gt)
    checks.append(rep.delta1 == 0.0 and rep.delta2 == 1.0)

    chain_ok = True
    for _ in range(100):
        g = rng.random((9, 9)) + 0.1
        p = g * rng.lognormal(0, 0.5, size=g.shape)
        r = depth_metrics(p, g)
        chain_ok &= r.delta1 <= r.delta2 <= r.delta3 <= 1.0
    checks.append(chain_ok)

    ok = all(checks)
    _report("criterion 8 (metrics ground truth)", ok, f"{sum(checks)}/{len(checks)} checks")


# ---------------------------------------------------------------- criterion 9


def test_criterion_9_calibration_determinism(tmp_path):
    from conftest import build_aperture_fixture, build_blb_fixture, build_dpdd_fixture

    exif = build_dpdd_fixture(tmp_path / "dpdd")
    build_aperture_fixture(tmp_path / "aperture")
    build_blb_fixture(tmp_path / "blb")

    def run_all(out_path, derived):
        rows = []
        rows += list(harmonize_dataset("dpdd", tmp_path / "dpdd", exif_dir=exif))
        rows += list(harmonize_dataset("aperture", tmp_path / "aperture"))
        rows += list(harmonize_dataset("blb", tmp_path / "blb", derived_dir=derived))
        io_formats.write_jsonl(rows, out_path)
        return rows

    rows1 = run_all(tmp_path / "a.jsonl", tmp_path / "derived")
    run_all(tmp_path / "b.jsonl", tmp_path / "derived")
    byte_identical = (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()

    data_rows = [r for r in rows1 if not r.get("trailer")]
    in_range = all(0.0 <= r["camera_anns"]["dof-cond"] <= 30.0 for r in data_rows)

    ap = [r for r in data_rows if r["camera_anns"]["source"] == "depth-median"]
    by_scene = {}
    for r in ap:
        by_scene.setdefault(r["input"], []).append(r)
    triplet_ok = all(
        len(g) == 2
        and {x["camera_anns"]["aperture"] for x in g} == {2.0, 8.0}
        and max(g, key=lambda x: x["camera_anns"]["aperture"])["camera_anns"]["dof-cond"]
        < min(g, key=lambda x: x["camera_anns"]["aperture"])["camera_anns"]["dof-cond"]
        for g in by_scene.values()
    )
    ok = byte_identical and in_range and triplet_ok and len(data_rows) >= 9
    _report(
        "criterion 9 (calibration determinism)",
        ok,
        f"byte-identical={byte_identical}, dof-cond in [0,30]={in_range}, "
        f"aperture ordering={triplet_ok}, rows={len(data_rows)}",
    )


# --------------------------------------------------------------- criterion 10


def test_criterion_10_end_to_end_pipeline(tmp_path, capsys):
    t0 = time.monotonic()
    fg_dir, bg_dir = write_asset_dirs(tmp_path, n_fg=2, n_bg=2, size=192)
    bench = tmp_path / "bench"
    rc = cli_main(
        [
            "gen-bench", "--fg-dir", str(fg_dir), "--bg-dir", str(bg_dir),
            "--out", str(bench), "--scenes", "4", "--frame-px", "192",
            "--margin-px", "32", "--k-lo", "5", "--k-hi", "16", "--seed", "5",
            "--jobs", "1",
        ]
    )
    assert rc == 0
    rc = cli_main(["validate-bench", "--root", str(bench)])
    assert rc == 0
    capsys.readouterr()

    abs_rels = []
    for scene_id in (f"scene_{i:04d}" for i in range(4)):
        meta_path = sorted((bench / "metadata").glob(f"{scene_id}_k*.json"))[0]
        meta = json.loads(meta_path.read_text())
        gt = io_formats.read_pfm(bench / meta["depth"])
        d_f = float(meta["d_f"])

        sign = np.where(gt > d_f, 1.0, -1.0).astype(np.float32)
        io_formats.write_pfm(sign, tmp_path / f"{scene_id}_sign.pfm")

        gy, gx = np.gradient(gt.astype(np.float64))
        edge = edge_exclusion_mask((np.hypot(gx, gy) > 1e-3), margin_px=21)
        mask = (~edge).astype(np.float32)
        mask[:24, :] = mask[-24:, :] = 0.0
        mask[:, :24] = mask[:, -24:] = 0.0
        io_formats.write_pfm(mask, tmp_path / f"{scene_id}_mask.pfm")

        pred = tmp_path / f"{scene_id}_pred.pfm"
        rc = cli_main(
            [
                "sweep-depth", "--stack-dir", str(bench), "--scene", scene_id,
                "--out", str(pred), "--sign-map", str(tmp_path / f"{scene_id}_sign.pfm"),
                "--r-max-px", "16", "--border-px", "24",
            ]
        )
        assert rc == 0
        capsys.readouterr()

        report_path = tmp_path / f"{scene_id}_eval.json"
        rc = cli_main(
            [
                "eval-depth", "--pred", str(pred), "--gt", str(bench / meta["depth"]),
                "--mask", str(tmp_path / f"{scene_id}_mask.pfm"),
                "--report", str(report_path),
            ]
        )
        assert rc == 0
        capsys.readouterr()
        abs_rels.append(json.loads(report_path.read_text())["abs_rel"])

    elapsed = time.monotonic() - t0
    worst = max(abs_rels)
    ok = worst < 0.05 and elapsed < 120.0
    _report(
        "criterion 10 (end-to-end pipeline)",
        ok,
        f"AbsRel per scene={['%.4f' % v for v in abs_rels]} (max {worst:.4f} < 0.05), "
        f"{elapsed:.1f}s (<120s)",
    )
