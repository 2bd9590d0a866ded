"""Training objectives for the deblurring and motion heads.

Per frame, the deblurring loss averages the weighted L1 errors of every
stack's restored frame over the pixel count, and the motion loss treats each
freshly computed cost volume as per-pixel classification logits over the
(2D+1)^2 displacement channels against the ground-truth displacement class.
The total objective is deblur + alpha * motion.
"""

from __future__ import annotations

from typing import Sequence

import torch
import torch.nn.functional as F

from .config import ModelConfig
from .motion import quarter_flow
from .unit import UnitOutputs


def deblur_loss(
    restored: Sequence[torch.Tensor], gt: torch.Tensor, lambdas: Sequence[float]
) -> torch.Tensor:
    """Weighted sum of per-stack L1 errors, normalized by pixel count.

    Each restored frame and ``gt`` are (B, 3, H, W); the absolute error is
    summed over channels and pixels, divided by H * W, and averaged over the
    batch. ``lambdas[n]`` weights stack n.
    """
    if len(restored) != len(lambdas):
        raise ValueError(f"{len(restored)} restored frames but {len(lambdas)} weights")
    m = gt.shape[2] * gt.shape[3]
    per_sample = torch.zeros(gt.shape[0], dtype=gt.dtype, device=gt.device)
    for lam, frame in zip(lambdas, restored):
        if frame.shape != gt.shape:
            raise ValueError(
                f"restored {tuple(frame.shape)} does not match target {tuple(gt.shape)}"
            )
        per_sample = per_sample + lam * (frame - gt).abs().sum(dim=(1, 2, 3))
    return (per_sample / m).mean()


def displacement_target(
    flow: torch.Tensor, max_displacement: int, stride: int = 4
) -> torch.Tensor:
    """Quantize a full-resolution flow field into displacement class indices.

    The flow is subsampled to matching resolution, its vectors scaled down by
    ``stride``, rounded half away from zero, and clamped to [-D, D]. Returns
    a (B, H/stride, W/stride) long tensor of channel indices
    k = (dy + D) * (2D + 1) + (dx + D).
    """
    if flow.dim() != 4 or flow.shape[1] != 2:
        raise ValueError(f"expected flow (B, 2, H, W), got {tuple(flow.shape)}")
    d = max_displacement
    q = quarter_flow(flow, stride)
    # torch.round halves to even; the target grid rounds halves away from zero.
    r = torch.sign(q) * torch.floor(q.abs() + 0.5)
    r = r.clamp(-d, d).long()
    return (r[:, 1] + d) * (2 * d + 1) + (r[:, 0] + d)


def motion_loss(
    volumes: Sequence[torch.Tensor | None], target: torch.Tensor
) -> torch.Tensor | None:
    """Sum of per-stack cross-entropies between cost volumes and the target.

    Each present volume is (B, K, H', W') logits; ``target`` is (B, H', W')
    long class indices. Every stack's cross-entropy is summed over pixels,
    divided by the pixel count, and averaged over the batch; stacks that
    reused another stack's matching pass None and contribute nothing.
    Returns None when no volume is present.
    """
    present = [v for v in volumes if v is not None]
    if not present:
        return None
    m = target.shape[1] * target.shape[2]
    total = None
    for volume in present:
        if volume.shape[0] != target.shape[0] or volume.shape[2:] != target.shape[1:]:
            raise ValueError(
                f"cost volume {tuple(volume.shape)} does not match target "
                f"{tuple(target.shape)}"
            )
        ce = F.cross_entropy(volume, target, reduction="none").sum(dim=(1, 2)) / m
        total = ce if total is None else total + ce
    return total.mean()


def frame_loss(
    outputs: Sequence[UnitOutputs],
    gt: torch.Tensor,
    flow: torch.Tensor | None,
    cfg: ModelConfig,
) -> tuple[torch.Tensor, dict[str, float]]:
    """Total loss for one frame: deblur plus alpha-weighted motion.

    ``flow`` is the full-resolution ground-truth flow toward the previous
    frame, or None when unavailable. The motion term is skipped when it is
    disabled, when no flow is given, or when no stack produced a cost volume.
    Returns the scalar loss and detached part values for logging.
    """
    restored = [o.restored for o in outputs]
    d_loss = deblur_loss(restored, gt, cfg.lambdas)
    parts = {"deblur": float(d_loss.detach())}
    total = d_loss
    if cfg.enable_motion_loss and flow is not None:
        target = displacement_target(flow, cfg.max_displacement, cfg.motion_stride)
        m_loss = motion_loss([o.cost_volume for o in outputs], target)
        if m_loss is not None:
            parts["motion"] = float(m_loss.detach())
            total = total + cfg.alpha * m_loss
    parts["total"] = float(total.detach())
    return total, parts
