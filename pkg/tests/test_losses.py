"""Loss terms checked against hand-computed and closed-form values."""

import math

import pytest
import torch

from mtdeblur import ModelConfig, deblur_loss, displacement_target, frame_loss, motion_loss
from mtdeblur.unit import UnitOutputs


def outputs_stub(restored, volume=None):
    return UnitOutputs(
        detail=torch.zeros(1),
        injected=torch.zeros(1),
        warped=torch.zeros(1),
        cost_volume=volume,
        displacement=None,
        residual=torch.zeros_like(restored),
        restored=restored,
    )


class TestDeblurLoss:
    def test_hand_computed_single_pixel(self):
        # Two stacks on a 1-pixel image. Stack 0 restores (0.5, 0.5, 0.5),
        # stack 1 restores (0.25, 0.75, 0.25); target is (0, 1, 0).
        # L1 sums: stack 0 -> 0.5+0.5+0.5 = 1.5; stack 1 -> 0.25+0.25+0.25 = 0.75.
        # Pixel count M = 1, so loss = 0.1*1.5 + 1.0*0.75 = 0.9.
        r0 = torch.tensor([0.5, 0.5, 0.5], dtype=torch.float64).view(1, 3, 1, 1)
        r1 = torch.tensor([0.25, 0.75, 0.25], dtype=torch.float64).view(1, 3, 1, 1)
        gt = torch.tensor([0.0, 1.0, 0.0], dtype=torch.float64).view(1, 3, 1, 1)
        loss = deblur_loss([r0, r1], gt, [0.1, 1.0])
        assert abs(loss.item() - 0.9) <= 1e-9

    def test_perfect_restoration_is_zero(self):
        gt = torch.rand(2, 3, 4, 4)
        assert deblur_loss([gt.clone(), gt.clone()], gt, [0.1, 1.0]).item() == 0.0

    def test_normalized_by_pixels_not_channels(self):
        # Constant error of 0.5 on every channel of a 2x2 image:
        # sum = 0.5 * 3 * 4 = 6; M = 4 -> loss = 1.5 regardless of H, W.
        for hw in ((2, 2), (4, 8)):
            gt = torch.zeros(1, 3, *hw)
            pred = torch.full_like(gt, 0.5)
            loss = deblur_loss([pred], gt, [1.0])
            assert abs(loss.item() - 1.5) <= 1e-9

    def test_batch_mean(self):
        gt = torch.zeros(2, 3, 1, 1)
        pred = gt.clone()
        pred[1] = 1.0  # second sample off by 1 on all 3 channels -> L1 sum 3
        loss = deblur_loss([pred], gt, [1.0])
        assert abs(loss.item() - 1.5) <= 1e-9

    def test_weight_count_mismatch_rejected(self):
        gt = torch.zeros(1, 3, 2, 2)
        with pytest.raises(ValueError, match="weights"):
            deblur_loss([gt.clone()], gt, [0.1, 1.0])


class TestMotionLoss:
    @pytest.mark.parametrize("d", [2, 10])
    def test_uniform_logits_give_log_channel_count(self, d):
        # Cross-entropy of a uniform distribution over K classes is ln K;
        # for D=10 that is ln 441 = 6.089044875...
        k = (2 * d + 1) ** 2
        vol = torch.zeros(2, k, 3, 5)
        target = torch.randint(0, k, (2, 3, 5))
        loss = motion_loss([vol], target)
        assert abs(loss.item() - math.log(k)) <= 1e-6

    def test_two_stacks_sum(self):
        k = 25
        vol = torch.zeros(1, k, 2, 2)
        target = torch.zeros(1, 2, 2, dtype=torch.long)
        loss = motion_loss([vol, vol.clone()], target)
        assert abs(loss.item() - 2 * math.log(k)) <= 1e-6

    def test_skipped_stacks_contribute_nothing(self):
        k = 25
        vol = torch.zeros(1, k, 2, 2)
        target = torch.zeros(1, 2, 2, dtype=torch.long)
        assert motion_loss([vol, None], target).item() == motion_loss([vol], target).item()
        assert motion_loss([None, None], target) is None

    def test_confident_correct_prediction_near_zero(self):
        k = 9
        target = torch.full((1, 2, 2), 4, dtype=torch.long)
        vol = torch.zeros(1, k, 2, 2)
        vol[:, 4] = 50.0
        assert motion_loss([vol], target).item() < 1e-6

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="does not match"):
            motion_loss([torch.zeros(1, 9, 2, 2)], torch.zeros(1, 3, 3, dtype=torch.long))


class TestDisplacementTarget:
    def test_constant_flow_quantizes_to_expected_class(self):
        # Full-resolution flow (8, 0) -> quarter-scale (2, 0) -> with D=4 the
        # class is (0+4)*9 + (2+4) = 42.
        flow = torch.zeros(1, 2, 8, 8)
        flow[:, 0] = 8.0
        target = displacement_target(flow, max_displacement=4, stride=4)
        assert target.shape == (1, 2, 2)
        assert (target == 42).all()

    def test_rounds_half_away_from_zero(self):
        # Quarter-scale component 1.5 rounds to 2, -1.5 rounds to -2.
        flow = torch.zeros(1, 2, 4, 4)
        flow[:, 0] = 6.0   # 6/4 = 1.5 -> 2
        flow[:, 1] = -6.0  # -1.5 -> -2
        target = displacement_target(flow, max_displacement=4, stride=4)
        assert (target == (-2 + 4) * 9 + (2 + 4)).all()

    def test_clamps_to_search_range(self):
        flow = torch.full((1, 2, 4, 4), 100.0)
        target = displacement_target(flow, max_displacement=2, stride=4)
        assert (target == (2 + 2) * 5 + (2 + 2)).all()

    def test_bad_shape_rejected(self):
        with pytest.raises(ValueError, match="flow"):
            displacement_target(torch.zeros(1, 3, 4, 4), 2)


class TestFrameLoss:
    def test_total_is_deblur_plus_alpha_motion(self):
        cfg = ModelConfig(num_stacks=1, feature_channels=4, max_displacement=2, lambdas=[1.0])
        gt = torch.zeros(1, 3, 8, 8)
        restored = torch.full_like(gt, 0.25)
        k = (2 * cfg.max_displacement + 1) ** 2
        vol = torch.zeros(1, k, 2, 2)
        flow = torch.zeros(1, 2, 8, 8)
        total, parts = frame_loss([outputs_stub(restored, vol)], gt, flow, cfg)
        expected = 0.25 * 3 + cfg.alpha * math.log(k)
        assert abs(total.item() - expected) <= 1e-6
        assert abs(parts["deblur"] - 0.75) <= 1e-9
        assert abs(parts["motion"] - math.log(k)) <= 1e-6

    def test_motion_term_skipped_without_flow(self):
        cfg = ModelConfig(num_stacks=1, feature_channels=4, max_displacement=2, lambdas=[1.0])
        gt = torch.zeros(1, 3, 8, 8)
        restored = torch.full_like(gt, 0.25)
        total, parts = frame_loss([outputs_stub(restored)], gt, None, cfg)
        assert "motion" not in parts
        assert abs(total.item() - 0.75) <= 1e-9

    def test_motion_term_skipped_when_disabled(self):
        cfg = ModelConfig(
            num_stacks=1, feature_channels=4, max_displacement=2,
            lambdas=[1.0], enable_motion_loss=False,
        )
        gt = torch.zeros(1, 3, 8, 8)
        vol = torch.zeros(1, 25, 2, 2)
        flow = torch.zeros(1, 2, 8, 8)
        total, parts = frame_loss([outputs_stub(gt.clone(), vol)], gt, flow, cfg)
        assert "motion" not in parts
        assert total.item() == 0.0
