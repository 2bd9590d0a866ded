"""Ablation sweeps: train sibling configurations and tabulate their metrics.

Two preset grids are provided. ``table1`` crosses residual learning with the
motion-compensation path (cost-volume matching + warping + motion loss),
starting from a stripped baseline. ``table2`` keeps motion compensation on
and crosses the motion loss with structure injection (the addition of
structure features before the motion layer). Every row trains from the same
seed, on the same clips, under the same schedule, so differences in the
scores are attributable to the toggled switches alone.
"""

from __future__ import annotations

import copy
import json
from dataclasses import replace
from pathlib import Path

import torch

from .config import ModelConfig
from .data import ingest_dataset, load_video, truncate_video
from .metrics import evaluate_dataset
from .pipeline import StackedModel
from .train import get_schedule, train

# Row name -> config overrides. Insertion order is presentation order.
GRIDS: dict[str, dict[str, dict[str, bool]]] = {
    "table1": {
        "baseline": {
            "enable_residual_learning": False,
            "enable_motion_compensation": False,
            "enable_motion_loss": False,
        },
        "residual_only": {
            "enable_motion_compensation": False,
            "enable_motion_loss": False,
        },
        "motion_only": {"enable_residual_learning": False},
        "full": {},
    },
    "table2": {
        "full": {},
        "no_motion_loss": {"enable_motion_loss": False},
        "no_injection": {"enable_structure_injection_addition": False},
        "neither": {
            "enable_motion_loss": False,
            "enable_structure_injection_addition": False,
        },
    },
}


def grid_rows(grid: str) -> list[str]:
    if grid not in GRIDS:
        raise ValueError(f"unknown grid {grid!r}, expected one of {sorted(GRIDS)}")
    return list(GRIDS[grid])


def run_ablation(
    dataset_root: str | Path,
    grid: str = "table2",
    rows: list[str] | None = None,
    base: ModelConfig | None = None,
    schedule_name: str = "smoke",
    steps: int = 400,
    seed: int = 0,
    holdout_frames: int = 18,
    log_dir: str | Path | None = None,
) -> dict:
    """Train every selected row of a grid and evaluate it on held-out frames.

    Each row trains on the first ``holdout_frames`` frames of every training
    video and is scored on the remaining frames, exactly like the toy
    training protocol; with ``holdout_frames=0`` whole videos serve for both.
    Returns a report dict with one entry per row.
    """
    available = grid_rows(grid)
    if rows is None:
        rows = available
    unknown = [r for r in rows if r not in available]
    if unknown:
        raise ValueError(f"unknown rows for grid {grid!r}: {unknown}; available: {available}")
    if base is None:
        base = ModelConfig(num_stacks=2, feature_channels=8, max_displacement=4)

    records = ingest_dataset(dataset_root, "train")
    videos = [load_video(r) for r in records]
    if holdout_frames > 0:
        videos = [truncate_video(v, holdout_frames) for v in videos]
    schedule = get_schedule(schedule_name)

    report_rows = []
    for name in rows:
        overrides = GRIDS[grid][name]
        cfg = replace(copy.deepcopy(base), **overrides)
        torch.manual_seed(seed)
        model = StackedModel(cfg)
        log_file = None
        if log_dir is not None:
            log_file = Path(log_dir) / f"ablate_{grid}_{name}.jsonl"
        stats = train(
            model,
            videos,
            schedule,
            max_steps=steps,
            seed=seed,
            log_file=log_file,
        )
        scores = evaluate_dataset(model, records, skip_frames=holdout_frames)["aggregate"]
        report_rows.append(
            {
                "row": name,
                "overrides": dict(overrides),
                "steps": stats["steps"],
                "train_seconds": stats["seconds"],
                **{k: scores[k] for k in (
                    "input_psnr", "psnr", "ssim", "align_psnr", "align_ssim", "epe",
                )},
            }
        )
    return {
        "grid": grid,
        "seed": seed,
        "schedule": schedule_name,
        "steps": steps,
        "holdout_frames": holdout_frames,
        "dataset": str(dataset_root),
        "rows": report_rows,
    }


def format_ablation(report: dict) -> str:
    """Render an ablation report as an aligned text table."""
    cols = ["row", "psnr", "ssim", "align_psnr", "align_ssim", "epe"]
    table = [cols]
    for row in report["rows"]:
        rendered = []
        for c in cols:
            v = row[c]
            if isinstance(v, float):
                rendered.append("nan" if v != v else f"{v:.3f}")
            else:
                rendered.append(str(v))
        table.append(rendered)
    widths = [max(len(r[i]) for r in table) for i in range(len(cols))]
    lines = ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(r)) for r in table]
    header = (
        f"grid={report['grid']} steps={report['steps']} seed={report['seed']} "
        f"holdout_frames={report['holdout_frames']}"
    )
    return header + "\n" + "\n".join(lines)


def save_ablation(report: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report, indent=2) + "\n")
