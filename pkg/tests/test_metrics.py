"""Quality metrics: PSNR, SSIM, endpoint error, alignment, dataset reports."""

import math

import pytest
import torch

from mtdeblur import (
    StackedModel,
    ModelConfig,
    alignment_accuracy,
    end_point_error,
    evaluate_dataset,
    ingest_dataset,
    psnr,
    ssim,
)
from mtdeblur.metrics import PSNR_CAP, SSIM_K1


class TestPsnr:
    def test_identical_images_hit_cap(self):
        img = torch.rand(3, 8, 8)
        assert psnr(img, img.clone()) == PSNR_CAP

    def test_known_mse(self):
        # Uniform error of 0.1 -> MSE 0.01 -> 10*log10(1/0.01) = 20 dB.
        a = torch.zeros(3, 8, 8)
        b = torch.full_like(a, 0.1)
        assert abs(psnr(a, b) - 20.0) < 1e-5

    def test_inputs_clamped(self):
        a = torch.full((3, 8, 8), 2.0)   # clamps to 1
        b = torch.ones(3, 8, 8)
        assert psnr(a, b) == PSNR_CAP

    def test_mask_restricts_region(self):
        a = torch.zeros(1, 3, 4, 4)
        b = a.clone()
        b[..., 0] = 1.0  # error only in the first column
        mask = torch.zeros(1, 1, 4, 4)
        mask[..., 1:] = 1.0
        assert psnr(a, b, mask=mask) == PSNR_CAP
        assert psnr(a, b) < PSNR_CAP

    def test_empty_mask_is_nan(self):
        a = torch.zeros(1, 3, 4, 4)
        assert math.isnan(psnr(a, a, mask=torch.zeros(1, 1, 4, 4)))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="shape"):
            psnr(torch.zeros(3, 4, 4), torch.zeros(3, 4, 5))


class TestSsim:
    def test_identical_images_score_one(self):
        img = torch.rand(3, 16, 16)
        assert abs(ssim(img, img.clone()) - 1.0) < 1e-6

    def test_zero_vs_one_closed_form(self):
        # Constant images have zero variance and covariance, so SSIM reduces
        # to (2ab + C1)/(a^2 + b^2 + C1) * (0 + C2)/(0 + C2); for a=0, b=1
        # that is C1/(1 + C1).
        c1 = SSIM_K1**2
        expected = c1 / (1 + c1)
        got = ssim(torch.zeros(3, 16, 16), torch.ones(3, 16, 16))
        assert abs(got - expected) < 1e-6

    def test_constant_vs_constant_closed_form(self):
        # General constants keep only the luminance term; float32 window
        # sums leave ~1e-4 of noise in the variance cancellation.
        a, b = 0.25, 0.75
        c1 = SSIM_K1**2
        expected = (2 * a * b + c1) / (a * a + b * b + c1)
        got = ssim(torch.full((3, 16, 16), a), torch.full((3, 16, 16), b))
        assert abs(got - expected) < 1e-3

    def test_symmetric(self):
        torch.manual_seed(2)
        a = torch.rand(3, 16, 16)
        b = torch.rand(3, 16, 16)
        assert ssim(a, b) == ssim(b, a)

    def test_noise_scores_below_one(self):
        torch.manual_seed(0)
        img = torch.rand(3, 16, 16)
        noisy = (img + 0.3 * torch.randn_like(img)).clamp(0, 1)
        assert ssim(img, noisy) < 0.9

    def test_too_small_images_rejected(self):
        with pytest.raises(ValueError, match="window"):
            ssim(torch.zeros(3, 8, 8), torch.zeros(3, 8, 8))

    def test_mask_needs_full_windows(self):
        img = torch.rand(1, 3, 16, 16)
        mask = torch.zeros(1, 16, 16)
        mask[:, :11, :11] = 1.0  # exactly one full 11x11 window
        assert abs(ssim(img, img.clone(), mask=mask) - 1.0) < 1e-6
        assert math.isnan(ssim(img, img.clone(), mask=torch.zeros(1, 16, 16)))


class TestEndPointError:
    def test_exact_prediction_is_zero(self):
        flow = torch.randn(1, 2, 4, 4).round()
        assert end_point_error(flow, flow.clone()) == 0.0

    def test_known_offset(self):
        gt = torch.zeros(1, 2, 4, 4)
        pred = torch.zeros(1, 2, 4, 4)
        pred[:, 0] = 3.0
        pred[:, 1] = 4.0
        assert abs(end_point_error(pred, gt) - 5.0) < 1e-6

    def test_unreachable_targets_excluded(self):
        # True motion pushes every pixel off the map: no pixel is scoreable.
        gt = torch.full((1, 2, 2, 2), 10.0)
        pred = torch.zeros_like(gt)
        assert math.isnan(end_point_error(pred, gt))
        assert end_point_error(pred, gt, restrict_to_reachable=False) > 0


class TestAlignmentAccuracy:
    def test_translation_with_perfect_quarter_displacement_hits_cap(self):
        # A pure 8px full-scale translation pools into a 2px quarter-scale
        # shift, so the correct quarter displacement aligns pixels exactly.
        torch.manual_seed(1)
        canvas = torch.rand(1, 3, 64, 104)
        prev = canvas[:, :, :, 8:104]
        cur = canvas[:, :, :, 0:96]
        # Content of the current frame sits 8px to the left in the previous
        # frame, so the quarter-scale displacement toward it is (-2, 0).
        good = torch.zeros(1, 2, 16, 24)
        good[:, 0] = -2.0
        zero = torch.zeros_like(good)
        psnr_good, ssim_good = alignment_accuracy(prev, cur, good)
        psnr_zero, ssim_zero = alignment_accuracy(prev, cur, zero)
        assert psnr_good == PSNR_CAP
        assert psnr_zero < psnr_good
        assert ssim_good > ssim_zero

    def test_static_scene_with_zero_displacement_hits_cap(self):
        frame = torch.rand(1, 3, 48, 48)
        p, s = alignment_accuracy(frame, frame.clone(), torch.zeros(1, 2, 12, 12))
        assert p == PSNR_CAP
        assert abs(s - 1.0) < 1e-6

    def test_scale_mismatch_rejected(self):
        frame = torch.rand(1, 3, 48, 48)
        with pytest.raises(ValueError, match="1/4"):
            alignment_accuracy(frame, frame.clone(), torch.zeros(1, 2, 48, 48))

    def test_tiny_frames_skip_ssim(self):
        frame = torch.rand(1, 3, 16, 16)
        p, s = alignment_accuracy(frame, frame.clone(), torch.zeros(1, 2, 4, 4))
        assert p == PSNR_CAP
        assert math.isnan(s)


@pytest.fixture
def report(small_dataset):
    torch.manual_seed(0)
    cfg = ModelConfig(num_stacks=1, feature_channels=4, max_displacement=2, lambdas=[1.0])
    model = StackedModel(cfg)
    records = ingest_dataset(small_dataset, "test")
    return evaluate_dataset(model, records)


class TestEvaluateDataset:

    def test_report_structure(self, report):
        assert set(report) == {"videos", "aggregate"}
        assert len(report["videos"]) == 1
        row = report["videos"][0]
        for key in ("name", "frames", "input_psnr", "psnr", "ssim",
                    "align_psnr", "align_ssim", "epe"):
            assert key in row

    def test_fresh_model_scores_equal_input(self, report):
        # Zero-initialized residual head restores the input exactly.
        row = report["videos"][0]
        assert abs(row["psnr"] - row["input_psnr"]) < 1e-6

    def test_alignment_absent_without_motion_compensation(self, small_dataset):
        torch.manual_seed(0)
        cfg = ModelConfig(
            num_stacks=1, feature_channels=4, max_displacement=2,
            lambdas=[1.0], enable_motion_compensation=False,
        )
        model = StackedModel(cfg)
        records = ingest_dataset(small_dataset, "test")
        row = evaluate_dataset(model, records)["videos"][0]
        assert math.isnan(row["align_psnr"])
        assert math.isnan(row["epe"])

    def test_skip_frames_reduces_scored_count(self, small_dataset):
        torch.manual_seed(0)
        cfg = ModelConfig(num_stacks=1, feature_channels=4, max_displacement=2, lambdas=[1.0])
        model = StackedModel(cfg)
        records = ingest_dataset(small_dataset, "test")
        report = evaluate_dataset(model, records, skip_frames=10)
        assert report["videos"][0]["frames"] == 4

    def test_half_precision_flag_close_to_full(self, small_dataset):
        torch.manual_seed(0)
        cfg = ModelConfig(num_stacks=1, feature_channels=4, max_displacement=2, lambdas=[1.0])
        model = StackedModel(cfg)
        records = ingest_dataset(small_dataset, "test")
        full = evaluate_dataset(model, records)
        half = evaluate_dataset(model, records, half_precision=True)
        assert model.dtype == torch.float32  # input model untouched
        assert abs(full["aggregate"]["psnr"] - half["aggregate"]["psnr"]) < 1.0
