"""Restoration quality, alignment accuracy, and dataset evaluation.

PSNR assumes a [0, 1] dynamic range and is capped at 100 dB. SSIM uses the
standard 11x11 Gaussian window (sigma 1.5, K1=0.01, K2=0.03, L=1) over valid
window positions only. Alignment accuracy warps the previous sharp frame at
quarter resolution with the predicted displacement map and scores it against
the current sharp frame over the pixels the warp could reach.
"""

from __future__ import annotations

import copy
import math
from typing import Sequence

import torch
import torch.nn.functional as F

from .data import VideoRecord, load_video
from .motion import quarter_flow, warp_features, warp_valid_mask

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def psnr(pred: torch.Tensor, target: torch.Tensor, mask: torch.Tensor | None = None) -> float:
    """Peak signal-to-noise ratio in dB over a [0, 1] range, capped at 100.

    Inputs are clamped to [0, 1] first. ``mask`` (broadcastable to the pixel
    grid, nonzero = counted) restricts the mean squared error to a region;
    an empty region yields nan.
    """
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    err = (pred.float().clamp(0, 1) - target.float().clamp(0, 1)) ** 2
    if mask is not None:
        mask = mask.to(err.dtype).expand_as(err)
        count = mask.sum()
        if count == 0:
            return float("nan")
        mse = float((err * mask).sum() / count)
    else:
        mse = float(err.mean())
    if mse == 0:
        return PSNR_CAP
    return min(10.0 * math.log10(1.0 / mse), PSNR_CAP)


def _gaussian_window(device: torch.device, dtype: torch.dtype) -> torch.Tensor:
    half = (SSIM_WINDOW - 1) / 2
    coords = torch.arange(SSIM_WINDOW, device=device, dtype=dtype) - half
    g = torch.exp(-(coords**2) / (2 * SSIM_SIGMA**2))
    g = g / g.sum()
    return torch.outer(g, g)


def ssim(pred: torch.Tensor, target: torch.Tensor, mask: torch.Tensor | None = None) -> float:
    """Mean structural similarity over valid 11x11 window positions.

    Accepts (C, H, W) or (B, C, H, W) tensors in [0, 1] (clamped). With a
    pixel ``mask`` (B, H, W) or (H, W), only windows made entirely of masked
    pixels count; returns nan when no window qualifies.
    """
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    if pred.dim() == 3:
        pred, target = pred.unsqueeze(0), target.unsqueeze(0)
        if mask is not None and mask.dim() == 2:
            mask = mask.unsqueeze(0)
    if pred.shape[2] < SSIM_WINDOW or pred.shape[3] < SSIM_WINDOW:
        raise ValueError(f"images smaller than the {SSIM_WINDOW}px window")
    a = pred.float().clamp(0, 1)
    b = target.float().clamp(0, 1)
    c = a.shape[1]
    window = _gaussian_window(a.device, a.dtype).expand(c, 1, -1, -1)

    mu_a = F.conv2d(a, window, groups=c)
    mu_b = F.conv2d(b, window, groups=c)
    var_a = F.conv2d(a * a, window, groups=c) - mu_a**2
    var_b = F.conv2d(b * b, window, groups=c) - mu_b**2
    cov = F.conv2d(a * b, window, groups=c) - mu_a * mu_b
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    ssim_map = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    )
    if mask is None:
        return float(ssim_map.mean())
    ones = torch.ones(1, 1, SSIM_WINDOW, SSIM_WINDOW, device=a.device, dtype=a.dtype)
    full = F.conv2d(mask.to(a.dtype).unsqueeze(1), ones) >= SSIM_WINDOW**2 - 0.5
    full = full.expand_as(ssim_map)
    if not full.any():
        return float("nan")
    return float(ssim_map[full].mean())


def end_point_error(
    pred_disp: torch.Tensor, gt_flow: torch.Tensor, restrict_to_reachable: bool = True
) -> float:
    """Mean Euclidean distance between predicted and true displacement fields.

    Both inputs are (B, 2, H, W) at the same scale. When restricted, pixels
    whose true match falls outside the map (where no correct prediction
    exists) are excluded; returns nan if none remain.
    """
    if pred_disp.shape != gt_flow.shape:
        raise ValueError(
            f"shape mismatch: {tuple(pred_disp.shape)} vs {tuple(gt_flow.shape)}"
        )
    dist = torch.linalg.vector_norm(pred_disp.float() - gt_flow.float(), dim=1)
    if restrict_to_reachable:
        h, w = gt_flow.shape[2], gt_flow.shape[3]
        rounded = torch.sign(gt_flow) * torch.floor(gt_flow.abs() + 0.5)
        valid = warp_valid_mask(rounded.long(), h, w)
        if not valid.any():
            return float("nan")
        return float(dist[valid].mean())
    return float(dist.mean())


def alignment_accuracy(
    gt_prev: torch.Tensor, gt_cur: torch.Tensor, disp_quarter: torch.Tensor
) -> tuple[float, float]:
    """Score a displacement map by warping the previous sharp frame onto the current one.

    Both frames (B, 3, H, W) are downsampled by 4 with area averaging, the
    previous one is warped by the quarter-scale displacement map, and
    PSNR/SSIM are computed against the pooled current frame over the pixels
    the warp could fill. SSIM is nan when the pooled frames are smaller than
    its window.
    """
    if gt_prev.shape != gt_cur.shape:
        raise ValueError("frame shapes differ")
    factor = 4
    pooled_prev = F.avg_pool2d(gt_prev.float(), factor)
    pooled_cur = F.avg_pool2d(gt_cur.float(), factor)
    if disp_quarter.shape[2:] != pooled_prev.shape[2:]:
        raise ValueError(
            f"displacement {tuple(disp_quarter.shape)} is not at 1/4 the "
            f"frame resolution {tuple(gt_prev.shape)}"
        )
    disp_q = disp_quarter.float().round().long()
    warped = warp_features(pooled_prev, disp_q)
    mask = warp_valid_mask(disp_q, pooled_prev.shape[2], pooled_prev.shape[3])
    p = psnr(warped, pooled_cur, mask=mask.unsqueeze(1))
    if min(pooled_prev.shape[2], pooled_prev.shape[3]) < SSIM_WINDOW:
        s = float("nan")
    else:
        s = ssim(warped, pooled_cur, mask=mask)
    return p, s


def evaluate_dataset(
    model,
    records: Sequence[VideoRecord],
    max_frames: int | None = None,
    skip_frames: int = 0,
    half_precision: bool = False,
) -> dict:
    """Run the model over whole videos and collect quality metrics.

    Returns ``{"videos": [row, ...], "aggregate": row}``. Every row carries
    input/restored PSNR and SSIM; alignment PSNR/SSIM appear when motion
    compensation is enabled, and displacement end-point error additionally
    requires ground-truth flow. ``skip_frames`` excludes the first frames of
    every video from the metrics (they still feed the recurrence), which
    scores only the frames after that point, e.g. a held-out tail.
    ``half_precision`` runs inference on a 16-bit copy of the model; the
    model passed in is left untouched. Videos are processed one at a time.
    """
    if half_precision:
        model = copy.deepcopy(model).half()
        model.cfg.precision = "half"
    rows = []
    for record in records:
        video = load_video(record)
        rows.append(_evaluate_video(model, video, max_frames, skip_frames))
        del video
    keys = [k for k in rows[0] if k not in ("name", "frames")]
    aggregate = {"name": "aggregate", "frames": sum(r["frames"] for r in rows)}
    for key in keys:
        vals = [r[key] for r in rows if r[key] == r[key]]
        aggregate[key] = sum(vals) / len(vals) if vals else float("nan")
    return {"videos": rows, "aggregate": aggregate}


@torch.no_grad()
def _evaluate_video(model, video, max_frames: int | None, skip_frames: int = 0) -> dict:
    t_total = len(video) if max_frames is None else min(len(video), max_frames)
    use_mc = model.cfg.enable_motion_compensation
    input_psnrs, psnrs, ssims = [], [], []
    align_psnrs, align_ssims, epes = [], [], []
    state = None
    for t in range(t_total):
        blurry = video.blur[t].unsqueeze(0).to(model.device, model.dtype)
        gt = video.gt[t].unsqueeze(0)
        if state is None:
            state = model.init_state(blurry)
        outputs, state = model.step(state, blurry)
        state = state.detach()
        if t < skip_frames:
            continue
        restored = outputs[-1].restored.float().cpu()
        input_psnrs.append(psnr(video.blur[t], video.gt[t]))
        psnrs.append(psnr(restored[0], video.gt[t]))
        ssims.append(ssim(restored[0], video.gt[t]))
        if use_mc and t >= 1:
            disp_q = quarter_flow(outputs[-1].displacement.cpu().float())
            a_psnr, a_ssim = alignment_accuracy(
                video.gt[t - 1].unsqueeze(0), gt, disp_q
            )
            align_psnrs.append(a_psnr)
            align_ssims.append(a_ssim)
            if video.flow is not None:
                gt_q = quarter_flow(video.flow[t].unsqueeze(0))
                epes.append(end_point_error(disp_q, gt_q))

    def agg(vals):
        vals = [v for v in vals if v == v]
        return sum(vals) / len(vals) if vals else float("nan")

    return {
        "name": video.name,
        "frames": t_total - skip_frames,
        "input_psnr": agg(input_psnrs),
        "psnr": agg(psnrs),
        "ssim": agg(ssims),
        "align_psnr": agg(align_psnrs),
        "align_ssim": agg(align_ssims),
        "epe": agg(epes),
    }
