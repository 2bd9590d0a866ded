"""Latency benchmarking with explicit device-synchronization policy.

Asynchronous backends (CUDA) return from a kernel launch before the kernel
finishes, so wall-clock timing without a device synchronization measures
submission time, not compute time. Every measured iteration here can
therefore run in two modes: ``sync=True`` blocks on the device before
reading the clock (the honest number), ``sync=False`` reproduces the naive
measurement for comparison. On a host-only backend the two agree up to
timer noise.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import replace

import torch

from .config import ModelConfig
from .pipeline import StackedModel


def parameter_count(model: torch.nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def _synchronize(device: torch.device) -> None:
    if device.type == "cuda":
        torch.cuda.synchronize(device)


def benchmark_latency(
    model: StackedModel,
    height: int = 720,
    width: int = 1280,
    iterations: int = 30,
    warmup: int = 5,
    sync: bool = True,
    seed: int = 0,
) -> dict:
    """Measure steady-state per-frame latency of the streaming model.

    The model is driven like a live video feed: state initialized once, then
    one step per incoming frame. ``warmup`` frames are run unmeasured to let
    allocator pools and caches settle; each of the following ``iterations``
    frames is timed individually.

    Returns a report dict with per-frame statistics in milliseconds.
    """
    if height % 4 or width % 4:
        raise ValueError(f"frame sides must be multiples of 4, got {height}x{width}")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if warmup < 0:
        raise ValueError("warmup must be >= 0")
    device = model.device
    generator = torch.Generator().manual_seed(seed)
    # A short cycle of distinct frames keeps any content-dependent branches
    # honest without holding a whole video in memory.
    frames = [
        torch.rand(1, 3, height, width, generator=generator).to(device=device, dtype=model.dtype)
        for _ in range(4)
    ]

    model.eval()
    times_ms = []
    with torch.no_grad():
        state = model.init_state(frames[0])
        for i in range(warmup):
            _, state = model.step(state, frames[i % len(frames)])
        if sync:
            _synchronize(device)
        for i in range(iterations):
            frame = frames[i % len(frames)]
            start = time.perf_counter()
            _, state = model.step(state, frame)
            if sync:
                _synchronize(device)
            times_ms.append((time.perf_counter() - start) * 1000.0)

    mean_ms = statistics.fmean(times_ms)
    return {
        "mean_ms": mean_ms,
        "median_ms": statistics.median(times_ms),
        "min_ms": min(times_ms),
        "max_ms": max(times_ms),
        "fps": 1000.0 / mean_ms if mean_ms > 0 else float("inf"),
        "unit": "ms/frame",
        "iterations": iterations,
        "warmup": warmup,
        "sync": sync,
        "device": str(device),
        "precision": model.cfg.precision,
        "num_stacks": model.cfg.num_stacks,
        "skip_matching": model.cfg.skip_matching,
        "parameters": parameter_count(model),
        "height": height,
        "width": width,
    }


def benchmark_sync_and_naive(
    model: StackedModel,
    height: int,
    width: int,
    iterations: int = 30,
    warmup: int = 5,
    seed: int = 0,
) -> dict:
    """Run the synchronized and naive timing side by side.

    On an asynchronous accelerator the synchronized mean is the true cost and
    the naive mean undershoots it; on a host-only backend both agree.
    """
    synced = benchmark_latency(model, height, width, iterations, warmup, sync=True, seed=seed)
    naive = benchmark_latency(model, height, width, iterations, warmup, sync=False, seed=seed)
    return {"sync": synced, "naive": naive}


def stack_sweep(
    base: ModelConfig,
    stacks: tuple[int, ...] = (1, 2, 4, 10),
    height: int = 128,
    width: int = 128,
    iterations: int = 20,
    warmup: int = 3,
    device: str | torch.device = "cpu",
    seed: int = 0,
) -> list[dict]:
    """Benchmark the same configuration at several stack counts."""
    rows = []
    for n in stacks:
        cfg = replace(base, num_stacks=n, lambdas=None)
        torch.manual_seed(seed)
        model = StackedModel(cfg).to(device)
        rows.append(benchmark_latency(model, height, width, iterations, warmup, sync=True, seed=seed))
    return rows


def format_report(rows: list[dict]) -> str:
    """Render benchmark rows as an aligned text table."""
    cols = ["num_stacks", "skip_matching", "precision", "mean_ms", "median_ms", "fps", "parameters", "sync"]
    header = {"num_stacks": "N", "skip_matching": "skip", "precision": "prec",
              "mean_ms": "mean_ms", "median_ms": "median_ms", "fps": "fps",
              "parameters": "params", "sync": "sync"}
    lines = []
    widths = {}
    table = [[header[c] for c in cols]]
    for row in rows:
        rendered = []
        for c in cols:
            v = row.get(c, "")
            if isinstance(v, float):
                v = f"{v:.2f}"
            rendered.append(str(v))
        table.append(rendered)
    for i, _ in enumerate(cols):
        widths[i] = max(len(r[i]) for r in table)
    for r in table:
        lines.append("  ".join(cell.rjust(widths[i]) for i, cell in enumerate(r)))
    return "\n".join(lines)
