"""Clip-based training: one Adam step per batch of 13-frame clips.

Each step samples a batch of clips, rebuilds the recurrent state from the
first frame of every clip, unrolls the model through the whole clip with
gradients flowing across frames, and applies one optimizer update on the
frame-averaged loss. Learning rates follow piecewise-constant phases.
"""

from __future__ import annotations

import copy
import json
import time
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .config import config_to_dict
from .data import InMemoryVideo, sample_clip
from .losses import frame_loss
from .pipeline import StackedModel, save_checkpoint


@dataclass
class TrainSchedule:
    """Optimization plan: (steps, lr) phases plus sampling geometry."""

    phases: list[tuple[int, float]]
    batch_size: int = 8
    beta1: float = 0.9
    beta2: float = 0.999
    crop_size: int = 256
    clip_frames: int = 13

    def total_steps(self) -> int:
        return sum(steps for steps, _ in self.phases)

    def learning_rate(self, step: int) -> float:
        """Learning rate for a 0-based global step; the last phase extends forever."""
        remaining = step
        for steps, lr in self.phases:
            if remaining < steps:
                return lr
            remaining -= steps
        return self.phases[-1][1]


SCHEDULES: dict[str, TrainSchedule] = {
    # Full-scale recipe for benchmark-dataset comparisons.
    "comparison": TrainSchedule(
        phases=[(1_000_000, 1e-4), (250_000, 2.5e-5), (50_000, 6.25e-6)],
        batch_size=8,
        crop_size=256,
    ),
    # Shorter recipe for design studies.
    "analysis": TrainSchedule(
        phases=[(300_000, 1e-4)],
        batch_size=8,
        crop_size=256,
    ),
    # Minutes-scale recipe for tiny synthetic data on CPU.
    "smoke": TrainSchedule(
        phases=[(2000, 1e-3)],
        batch_size=2,
        crop_size=64,
    ),
}


def get_schedule(name: str, **overrides) -> TrainSchedule:
    if name not in SCHEDULES:
        raise ValueError(f"unknown schedule {name!r}; choose from {sorted(SCHEDULES)}")
    sched = copy.deepcopy(SCHEDULES[name])
    return replace(sched, **overrides) if overrides else sched


def train(
    model: StackedModel,
    videos: list[InMemoryVideo],
    schedule: TrainSchedule,
    max_steps: int | None = None,
    seed: int = 0,
    log_file: str | None = None,
    log_every: int = 25,
    checkpoint_path: str | None = None,
    checkpoint_every: int = 1000,
    resume: bool = False,
) -> dict:
    """Optimize ``model`` in place; returns a summary of the final step.

    ``max_steps`` caps the schedule's total step count. With ``resume`` and an
    existing checkpoint at ``checkpoint_path``, training continues from the
    stored step with the stored optimizer and sampler state. A non-finite
    loss aborts with diagnostics rather than training through it.
    """
    total = schedule.total_steps()
    if max_steps is not None:
        total = min(total, max_steps)
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    optimizer = torch.optim.Adam(
        model.parameters(), lr=schedule.phases[0][1], betas=(schedule.beta1, schedule.beta2)
    )
    start_step = 0
    if resume and checkpoint_path is not None:
        start_step = _restore(checkpoint_path, model, optimizer, rng)

    log_fh = open(log_file, "a") if log_file else None
    parts: dict[str, float] = {}
    started = time.perf_counter()
    try:
        for step in range(start_step, total):
            lr = schedule.learning_rate(step)
            for group in optimizer.param_groups:
                group["lr"] = lr
            blur, gt, flow = _sample_batch(videos, schedule, rng)
            loss, parts = _clip_loss(model, blur, gt, flow)
            if not torch.isfinite(loss):
                _dump_divergence(model, optimizer, step, parts, checkpoint_path, log_fh)
                raise RuntimeError(f"non-finite loss at step {step}: {parts}")
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            done = step + 1
            if log_fh and (done % log_every == 0 or done == total):
                record = {
                    "step": done,
                    "lr": lr,
                    "seconds": round(time.perf_counter() - started, 3),
                    **{k: round(v, 6) for k, v in parts.items()},
                }
                log_fh.write(json.dumps(record) + "\n")
                log_fh.flush()
            if checkpoint_path and (done % checkpoint_every == 0 or done == total):
                save_checkpoint(
                    checkpoint_path,
                    model,
                    optimizer=optimizer,
                    step=done,
                    extra={
                        "sampler_state": rng.bit_generator.state,
                        "torch_rng": torch.get_rng_state(),
                    },
                )
    finally:
        if log_fh:
            log_fh.close()
    return {"steps": total, "seconds": time.perf_counter() - started, **parts}


def _sample_batch(
    videos: list[InMemoryVideo], schedule: TrainSchedule, rng: np.random.Generator
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    clips = [
        sample_clip(videos, schedule.clip_frames, schedule.crop_size, rng)
        for _ in range(schedule.batch_size)
    ]
    blur = torch.stack([c[0] for c in clips], dim=1)
    gt = torch.stack([c[1] for c in clips], dim=1)
    flow = torch.stack([c[2] for c in clips], dim=1)
    return blur, gt, flow


def _clip_loss(
    model: StackedModel, blur: torch.Tensor, gt: torch.Tensor, flow: torch.Tensor
) -> tuple[torch.Tensor, dict[str, float]]:
    """Frame-averaged loss over one clip batch, with state carried across frames."""
    device, dtype = model.device, model.dtype
    frames = blur.shape[0]
    state = model.init_state(blur[0].to(device, dtype))
    totals: list[torch.Tensor] = []
    sums: dict[str, float] = {}
    for t in range(frames):
        outputs, state = model.step(state, blur[t].to(device, dtype))
        loss_t, parts_t = frame_loss(
            outputs, gt[t].to(device, dtype), flow[t].to(device), model.cfg
        )
        totals.append(loss_t)
        for k, v in parts_t.items():
            sums[k] = sums.get(k, 0.0) + v
    loss = torch.stack(totals).mean()
    return loss, {k: v / frames for k, v in sums.items()}


def _restore(path: str, model: StackedModel, optimizer, rng: np.random.Generator) -> int:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    stored = payload.get("config")
    if stored != config_to_dict(model.cfg):
        raise ValueError("checkpoint config does not match the model being trained")
    model.load_state_dict(payload["model_state"], strict=True)
    if "optimizer_state" in payload:
        optimizer.load_state_dict(payload["optimizer_state"])
    if "sampler_state" in payload:
        rng.bit_generator.state = payload["sampler_state"]
    if "torch_rng" in payload:
        torch.set_rng_state(payload["torch_rng"])
    return int(payload.get("step", 0))


def _dump_divergence(model, optimizer, step, parts, checkpoint_path, log_fh) -> None:
    if log_fh:
        log_fh.write(json.dumps({"step": step, "event": "non_finite_loss", **parts}) + "\n")
        log_fh.flush()
    if checkpoint_path:
        save_checkpoint(f"{checkpoint_path}.diverged", model, optimizer=optimizer, step=step)
