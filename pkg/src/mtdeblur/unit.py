"""One stacked unit: a shared detail network feeding two single-layer task heads."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .config import ModelConfig
from .motion import motion_compensate


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.relu = nn.ReLU(inplace=True)

    def forward(self, x):
        return x + self.conv2(self.relu(self.conv1(x)))


class DetailNetwork(nn.Module):
    """Small encoder-decoder producing detail features at input resolution.

    Encoder: one convolution followed by two stride-2 convolutions.
    Bottleneck: four residual blocks at quarter resolution.
    Decoder: two stride-2 transposed convolutions and a final convolution,
    with additive skip connections from the encoder at matching resolutions.
    Every hidden layer is ``channels`` wide.
    """

    def __init__(self, in_channels: int, channels: int):
        super().__init__()
        self.head = nn.Conv2d(in_channels, channels, 3, padding=1)
        self.down1 = nn.Conv2d(channels, channels, 3, stride=2, padding=1)
        self.down2 = nn.Conv2d(channels, channels, 3, stride=2, padding=1)
        self.blocks = nn.Sequential(*[ResidualBlock(channels) for _ in range(4)])
        self.up1 = nn.ConvTranspose2d(channels, channels, 4, stride=2, padding=1)
        self.up2 = nn.ConvTranspose2d(channels, channels, 4, stride=2, padding=1)
        self.tail = nn.Conv2d(channels, channels, 3, padding=1)
        self.relu = nn.ReLU(inplace=True)

    def forward(self, x):
        e0 = self.relu(self.head(x))
        e1 = self.relu(self.down1(e0))
        e2 = self.relu(self.down2(e1))
        b = self.blocks(e2)
        d1 = self.relu(self.up1(b)) + e1
        d0 = self.relu(self.up2(d1)) + e0
        return self.tail(d0)


@dataclass
class UnitOutputs:
    """Everything one unit produces for losses, metrics, and the next stack.

    ``cost_volume`` is None when matching was skipped or motion compensation
    is disabled; ``displacement`` is None only when motion compensation is
    disabled.
    """

    detail: torch.Tensor
    injected: torch.Tensor
    warped: torch.Tensor
    cost_volume: torch.Tensor | None
    displacement: torch.Tensor | None
    residual: torch.Tensor
    restored: torch.Tensor


class MultiTaskUnit(nn.Module):
    """Shared detail network plus one-layer deblurring and motion heads.

    The deblur head maps the concatenated current detail features and warped
    previous-frame features to a 3-channel residual image. The motion head is
    a single 1x1 stride-4 convolution producing the quarter-resolution
    features used for matching; keeping it 1x1 leaves virtually all learnable
    capacity in the detail network.
    """

    def __init__(self, cfg: ModelConfig, index: int):
        super().__init__()
        c = cfg.feature_channels
        self.cfg = cfg
        self.index = index
        self.detail_net = DetailNetwork(2 * c, c)
        self.deblur_layer = nn.Conv2d(2 * c, 3, 3, padding=1)
        self.motion_layer = nn.Conv2d(c, c, 1, stride=cfg.motion_stride)
        # Zero-init the deblur head so a fresh model restores the identity.
        nn.init.zeros_(self.deblur_layer.weight)
        nn.init.zeros_(self.deblur_layer.bias)

    def compute_detail(self, *inputs: torch.Tensor) -> torch.Tensor:
        """Concatenate the unit inputs along channels and run the detail network."""
        shapes = {t.shape[2:] for t in inputs}
        if len(shapes) != 1:
            raise ValueError(f"detail inputs disagree on resolution: {shapes}")
        return self.detail_net(torch.cat(inputs, dim=1))

    def inject_structure(self, detail: torch.Tensor, structure: torch.Tensor) -> torch.Tensor:
        """Combine detail and structure features into quarter-resolution matching features."""
        if detail.shape != structure.shape:
            raise ValueError(
                f"detail {tuple(detail.shape)} and structure {tuple(structure.shape)} differ"
            )
        s = detail + structure if self.cfg.enable_structure_injection_addition else detail
        if self.cfg.enable_motion_layer:
            return self.motion_layer(s)
        stride = self.cfg.motion_stride
        return s[:, :, ::stride, ::stride]

    def deblur(
        self, detail: torch.Tensor, warped: torch.Tensor, blurry: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Produce the residual image and the restored frame."""
        if detail.shape != warped.shape:
            raise ValueError(
                f"detail {tuple(detail.shape)} and warped {tuple(warped.shape)} differ"
            )
        if blurry.shape[2:] != detail.shape[2:]:
            raise ValueError(
                f"frame {tuple(blurry.shape)} and features {tuple(detail.shape)} differ"
            )
        residual = self.deblur_layer(torch.cat([detail, warped], dim=1))
        restored = blurry + residual if self.cfg.enable_residual_learning else residual
        return residual, restored

    def forward(
        self,
        inputs: tuple[torch.Tensor, torch.Tensor],
        structure: torch.Tensor,
        prev_injected: torch.Tensor,
        prev_final_detail: torch.Tensor,
        blurry: torch.Tensor,
        reuse_displacement: torch.Tensor | None = None,
    ) -> UnitOutputs:
        detail = self.compute_detail(*inputs)
        injected = self.inject_structure(detail, structure)
        if self.cfg.enable_motion_compensation:
            warped, volume, disp = motion_compensate(
                injected,
                prev_injected,
                prev_final_detail,
                self.cfg.max_displacement,
                stride=self.cfg.motion_stride,
                reuse=reuse_displacement,
            )
        else:
            warped, volume, disp = prev_final_detail, None, None
        residual, restored = self.deblur(detail, warped, blurry)
        return UnitOutputs(
            detail=detail,
            injected=injected,
            warped=warped,
            cost_volume=volume,
            displacement=disp,
            residual=residual,
            restored=restored,
        )
