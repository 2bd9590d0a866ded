"""Recurrent stacked model: per-frame step, video streaming, checkpoints."""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass
from typing import Callable, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ModelConfig, config_from_dict, config_to_dict, validate_config
from .unit import MultiTaskUnit, UnitOutputs

CHECKPOINT_VERSION = 1


@dataclass
class RecurrentState:
    """Everything carried from frame t-1 to frame t.

    ``prev_injected`` holds one quarter-resolution feature map per stack; the
    other three tensors live at full resolution. The footprint is independent
    of how many frames have been processed.
    """

    prev_blurry: torch.Tensor
    prev_restored: torch.Tensor
    prev_final_detail: torch.Tensor
    prev_injected: list[torch.Tensor]

    def detach(self) -> "RecurrentState":
        return RecurrentState(
            prev_blurry=self.prev_blurry.detach(),
            prev_restored=self.prev_restored.detach(),
            prev_final_detail=self.prev_final_detail.detach(),
            prev_injected=[t.detach() for t in self.prev_injected],
        )

    def nbytes(self) -> int:
        tensors = [self.prev_blurry, self.prev_restored, self.prev_final_detail]
        tensors += list(self.prev_injected)
        return sum(t.element_size() * t.nelement() for t in tensors)


class StackedModel(nn.Module):
    """N multi-task units applied in sequence to each incoming frame.

    The first unit reads structure features of the current blurry frame plus
    an encoding of the previous blurry/restored pair; every later unit reads
    the detail and warped features produced by the unit below it. The final
    unit's restored frame and detail features feed the next time step.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        validate_config(cfg)
        c = cfg.feature_channels
        self.cfg = cfg
        self.conv_structure = nn.Conv2d(3, c, 3, padding=1)
        self.conv_pair = nn.Conv2d(6, c, 3, padding=1)
        self.units = nn.ModuleList(MultiTaskUnit(cfg, i) for i in range(cfg.num_stacks))
        if cfg.precision == "half":
            self.half()

    @property
    def device(self) -> torch.device:
        return next(self.parameters()).device

    @property
    def dtype(self) -> torch.dtype:
        return next(self.parameters()).dtype

    def init_state(self, first_blurry: torch.Tensor) -> RecurrentState:
        """Build the frame-0 state by duplicating the first frame.

        The previous blurry and restored frames are both set to the first
        frame and the previous final detail features to zero, so the first
        step sees a static scene.
        """
        frame = self._check_frame(first_blurry)
        structure = self.conv_structure(frame)
        zero_detail = torch.zeros_like(structure)
        injected = [u.inject_structure(zero_detail, structure) for u in self.units]
        return RecurrentState(
            prev_blurry=frame.clone(),
            prev_restored=frame.clone(),
            prev_final_detail=zero_detail,
            prev_injected=injected,
        )

    def step(
        self, state: RecurrentState, blurry: torch.Tensor
    ) -> tuple[list[UnitOutputs], RecurrentState]:
        """Process one frame through all stacks and advance the state."""
        frame = self._check_frame(blurry)
        structure = self.conv_structure(frame)
        pair = self.conv_pair(torch.cat([state.prev_blurry, state.prev_restored], dim=1))
        outputs: list[UnitOutputs] = []
        for n, unit in enumerate(self.units):
            if n == 0:
                inputs = (structure, pair)
                reuse = None
            else:
                inputs = (outputs[n - 1].detail, outputs[n - 1].warped)
                reuse = outputs[0].displacement if self.cfg.skip_matching else None
            outputs.append(
                unit(
                    inputs,
                    structure,
                    state.prev_injected[n],
                    state.prev_final_detail,
                    frame,
                    reuse_displacement=reuse,
                )
            )
        new_state = RecurrentState(
            prev_blurry=frame,
            prev_restored=outputs[-1].restored,
            prev_final_detail=outputs[-1].detail,
            prev_injected=[o.injected for o in outputs],
        )
        return outputs, new_state

    @torch.no_grad()
    def run_video(
        self,
        frames: torch.Tensor | Sequence[torch.Tensor],
        on_step: Callable[[int, RecurrentState], None] | None = None,
    ) -> torch.Tensor:
        """Restore a whole video, streaming one frame at a time.

        ``frames`` is (T, 3, H, W) in [0, 1]. Frames whose sides are not
        multiples of 4 are padded on the right/bottom and cropped back after
        restoration. Only the fixed-size recurrent state is kept between
        frames; ``on_step`` can observe it after each frame. Returns the
        restored video as float32 of the original size.
        """
        if isinstance(frames, torch.Tensor):
            if frames.dim() != 4 or frames.shape[1] != 3:
                raise ValueError(f"expected frames (T, 3, H, W), got {tuple(frames.shape)}")
            frame_list: Sequence[torch.Tensor] = frames
        else:
            frame_list = frames
        if len(frame_list) == 0:
            raise ValueError("run_video needs at least one frame")

        restored_frames = []
        state: RecurrentState | None = None
        h = w = 0
        for t, frame in enumerate(frame_list):
            if frame.dim() != 3 or frame.shape[0] != 3:
                raise ValueError(f"expected frame (3, H, W), got {tuple(frame.shape)}")
            if t == 0:
                h, w = frame.shape[1], frame.shape[2]
            elif frame.shape[1:] != (h, w):
                raise ValueError("all frames in a video must share one resolution")
            batch = frame.unsqueeze(0).to(device=self.device, dtype=self.dtype)
            batch = pad_to_multiple(batch, 4)
            if state is None:
                state = self.init_state(batch)
            outputs, state = self.step(state, batch)
            state = state.detach()
            restored_frames.append(outputs[-1].restored[0, :, :h, :w].float().cpu())
            if on_step is not None:
                on_step(t, state)
        return torch.stack(restored_frames)

    def _check_frame(self, frame: torch.Tensor) -> torch.Tensor:
        if frame.dim() != 4 or frame.shape[1] != 3:
            raise ValueError(f"expected a (B, 3, H, W) frame batch, got {tuple(frame.shape)}")
        if frame.shape[2] % 4 or frame.shape[3] % 4:
            raise ValueError(
                f"frame sides must be multiples of 4, got {tuple(frame.shape[2:])}; "
                "use run_video or pad_to_multiple for other sizes"
            )
        return frame.to(device=self.device, dtype=self.dtype)


def pad_to_multiple(frame: torch.Tensor, multiple: int) -> torch.Tensor:
    """Pad the right/bottom of (B, C, H, W) so both sides divide ``multiple``."""
    h, w = frame.shape[2], frame.shape[3]
    pad_h = (multiple - h % multiple) % multiple
    pad_w = (multiple - w % multiple) % multiple
    if pad_h == 0 and pad_w == 0:
        return frame
    mode = "replicate" if (pad_h >= h or pad_w >= w) else "reflect"
    return F.pad(frame, (0, pad_w, 0, pad_h), mode=mode)


def save_checkpoint(
    path: str | os.PathLike,
    model: StackedModel,
    optimizer: torch.optim.Optimizer | None = None,
    step: int | None = None,
    extra: dict | None = None,
) -> None:
    """Atomically write model weights plus optional optimizer/step/extra state."""
    payload: dict = {
        "checkpoint_version": CHECKPOINT_VERSION,
        "config": config_to_dict(model.cfg),
        "model_state": model.state_dict(),
    }
    if optimizer is not None:
        payload["optimizer_state"] = optimizer.state_dict()
    if step is not None:
        payload["step"] = step
    if extra:
        reserved = set(payload)
        clash = reserved & set(extra)
        if clash:
            raise ValueError(f"extra keys clash with checkpoint fields: {sorted(clash)}")
        payload.update(extra)
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            torch.save(payload, fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(
    path: str | os.PathLike, map_location: str = "cpu"
) -> tuple[StackedModel, dict]:
    """Rebuild a model from a checkpoint; returns (model, extras).

    ``extras`` carries whatever beyond config/weights the checkpoint stored
    (optimizer state, step counter, RNG states).
    """
    payload = torch.load(os.fspath(path), map_location=map_location, weights_only=False)
    if not isinstance(payload, dict) or "checkpoint_version" not in payload:
        raise ValueError(f"{path} is not a model checkpoint")
    version = payload["checkpoint_version"]
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    cfg = config_from_dict(payload["config"])
    model = StackedModel(cfg)
    model.load_state_dict(payload["model_state"], strict=True)
    extras = {
        k: v
        for k, v in payload.items()
        if k not in ("checkpoint_version", "config", "model_state")
    }
    return model, extras
