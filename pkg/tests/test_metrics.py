import math

import numpy as np
import pytest

from conftest import rng_for
from lenssweep.metrics import (
    SSIM_SIGMA,
    SSIM_WINDOW,
    bokeh_quality,
    depth_metrics,
    psnr,
    ssim,
)


def _gauss_window():
    ax = np.arange(SSIM_WINDOW, dtype=np.float64) - (SSIM_WINDOW - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * SSIM_SIGMA**2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim_direct_oracle(x, y, peak=1.0):
    """Sliding-window SSIM computed with explicit python loops."""
    w = _gauss_window()
    c1, c2 = (0.01 * peak) ** 2, (0.03 * peak) ** 2
    h, wd = x.shape
    vals = []
    for yy in range(h - SSIM_WINDOW + 1):
        for xx in range(wd - SSIM_WINDOW + 1):
            px = x[yy : yy + SSIM_WINDOW, xx : xx + SSIM_WINDOW]
            py = y[yy : yy + SSIM_WINDOW, xx : xx + SSIM_WINDOW]
            mx = float((w * px).sum())
            my = float((w * py).sum())
            vx = float((w * px * px).sum()) - mx * mx
            vy = float((w * py * py).sum()) - my * my
            cxy = float((w * px * py).sum()) - mx * my
            vals.append(
                ((2 * mx * my + c1) * (2 * cxy + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2))
            )
    return float(np.mean(vals))


class TestPsnr:
    def test_identical_is_infinite(self):
        a = rng_for(0).random((16, 16, 3))
        assert math.isinf(psnr(a, a))

    def test_twenty_db(self):
        a = np.zeros((10, 10))
        b = np.full((10, 10), 0.1)
        assert psnr(a, b, peak=1.0) == pytest.approx(20.0, abs=1e-12)

    def test_zero_db(self):
        a = np.zeros((10, 10))
        b = np.ones((10, 10))
        assert psnr(a, b, peak=1.0) == pytest.approx(0.0, abs=1e-12)

    def test_symmetric(self):
        rng = rng_for(1)
        a, b = rng.random((8, 8)), rng.random((8, 8))
        assert psnr(a, b) == pytest.approx(psnr(b, a), rel=1e-15)

    def test_monotone_towards_infinity(self):
        a = rng_for(2).random((12, 12))
        values = [psnr(a, a + eps) for eps in (1e-2, 1e-4, 1e-6)]
        assert values[0] < values[1] < values[2]

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((4, 4)), np.zeros((5, 5)))


class TestSsim:
    def test_identical_is_one(self):
        a = rng_for(3).random((24, 24))
        assert ssim(a, a) == pytest.approx(1.0, abs=1e-9)

    def test_inverted_high_contrast_low_and_matches_oracle(self):
        rng = rng_for(4)
        a = (rng.random((20, 20)) > 0.5).astype(np.float64)
        b = 1.0 - a
        got = ssim(a, b)
        assert got < 0.5
        assert got == pytest.approx(ssim_direct_oracle(a, b), abs=1e-6)

    def test_constant_shift_matches_oracle(self):
        rng = rng_for(5)
        a = 0.8 * rng.random((18, 18))
        b = a + 0.1
        assert ssim(a, b) == pytest.approx(ssim_direct_oracle(a, b), abs=1e-6)

    def test_symmetric(self):
        rng = rng_for(6)
        a, b = rng.random((16, 16)), rng.random((16, 16))
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-9)

    def test_multichannel_is_channel_mean(self):
        rng = rng_for(7)
        a, b = rng.random((16, 16, 3)), rng.random((16, 16, 3))
        per = [ssim(a[:, :, c], b[:, :, c]) for c in range(3)]
        assert ssim(a, b) == pytest.approx(float(np.mean(per)), rel=1e-12)

    def test_rejects_small_images(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((8, 8)), np.zeros((8, 8)))


class TestDepthMetrics:
    def test_exact_prediction(self):
        gt = rng_for(8).random((12, 12)) + 0.5
        rep = depth_metrics(gt, gt)
        assert rep.abs_rel == 0 and rep.sq_rel == 0 and rep.rmse == 0
        assert rep.rmse_log == 0 and rep.log10 == 0
        assert rep.delta1 == rep.delta2 == rep.delta3 == 1.0
        assert rep.n_valid == 144

    def test_ten_percent_overshoot(self):
        gt = rng_for(9).random((10, 10)) + 0.5
        rep = depth_metrics(1.1 * gt, gt)
        assert rep.abs_rel == pytest.approx(0.1, rel=1e-9)
        assert rep.delta1 == 1.0

    def test_thirty_percent_overshoot_threshold_boundaries(self):
        gt = rng_for(10).random((10, 10)) + 0.5
        rep = depth_metrics(1.3 * gt, gt)
        assert rep.delta1 == 0.0
        assert rep.delta2 == 1.0  # 1.3 < 1.5625

    def test_delta_chain_monotone_on_random_pairs(self):
        rng = rng_for(11)
        for _ in range(100):
            gt = rng.random((9, 9)) + 0.1
            pred = gt * rng.lognormal(0, 0.4, size=gt.shape)
            rep = depth_metrics(pred, gt)
            assert rep.delta1 <= rep.delta2 <= rep.delta3 <= 1.0
            assert rep.abs_rel >= 0 and rep.sq_rel >= 0 and rep.rmse >= 0

    def test_mask_permutation_invariance(self):
        rng = rng_for(12)
        gt = rng.random((8, 8)) + 0.5
        pred = gt * 1.05
        mask = rng.random((8, 8)) > 0.3
        rep = depth_metrics(pred, gt, valid_mask=mask)
        # permuting the pixels inside the mask changes nothing
        idx = np.flatnonzero(mask)
        perm = rng.permutation(idx)
        gt2, pred2 = gt.copy(), pred.copy()
        gt2.flat[idx], pred2.flat[idx] = gt.flat[perm], pred.flat[perm]
        rep2 = depth_metrics(pred2, gt2, valid_mask=mask)
        assert rep.abs_rel == pytest.approx(rep2.abs_rel, rel=1e-12)
        assert rep.delta1 == rep2.delta1

    def test_nonpositive_predictions_counted(self):
        gt = np.full((4, 4), 2.0)
        pred = gt.copy()
        pred[0, 0] = -1.0
        rep = depth_metrics(pred, gt)
        assert rep.n_valid == 15
        assert rep.n_nonpositive_pred == 1

    def test_empty_valid_set_rejected(self):
        with pytest.raises(ValueError):
            depth_metrics(np.ones((3, 3)), np.ones((3, 3)), valid_mask=np.zeros((3, 3), bool))

    def test_rejects_nonpositive_gt(self):
        with pytest.raises(ValueError):
            depth_metrics(np.ones((3, 3)), np.zeros((3, 3)))


def test_bokeh_quality_report():
    rng = rng_for(13)
    a = rng.random((20, 20, 3))
    rep = bokeh_quality(a, a)
    assert math.isinf(rep.psnr_db)
    assert rep.ssim == pytest.approx(1.0, abs=1e-9)
    assert rep.n_pixels == 400
