"""Command-line interface: dataset synthesis, training, inference, evaluation,
benchmarking, and ablation sweeps.

Every command is deterministic for a fixed ``--seed`` (full precision) and
exits nonzero on validation failures. ``MTDEBLUR_DEVICE`` and
``MTDEBLUR_SEED`` provide environment defaults for ``--device`` and
``--seed``.
"""

from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
from pathlib import Path

import torch

from .ablate import format_ablation, grid_rows, run_ablation, save_ablation
from .bench import benchmark_latency, benchmark_sync_and_naive, format_report, stack_sweep
from .config import ModelConfig, load_config, save_config, validate_config
from .data import ingest_dataset, load_image, load_video, make_synthetic, save_image
from .metrics import evaluate_dataset
from .pipeline import StackedModel, load_checkpoint, save_checkpoint
from .train import SCHEDULES, get_schedule, train


def _env_seed(default: int = 0) -> int:
    raw = os.environ.get("MTDEBLUR_SEED")
    if raw is None:
        return default
    try:
        return int(raw)
    except ValueError as exc:
        raise ValueError(f"MTDEBLUR_SEED must be an integer, got {raw!r}") from exc


def _env_device() -> str:
    return os.environ.get("MTDEBLUR_DEVICE", "cpu")


def cmd_make_synthetic(args: argparse.Namespace) -> int:
    make_synthetic(
        args.out,
        train_videos=args.videos,
        test_videos=args.test_videos,
        frames=args.frames,
        height=args.size,
        width=args.size,
        max_speed=args.speed,
        blur_steps=args.subframes,
        seed=args.seed,
    )
    total = args.videos + args.test_videos
    print(
        f"wrote {total} videos ({args.videos} train, {args.test_videos} test), "
        f"{args.frames} frames each at {args.size}x{args.size}, to {args.out}"
    )
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = load_config(args.config) if args.config else ModelConfig()
    validate_config(cfg)
    schedule = get_schedule(args.preset)
    records = ingest_dataset(args.dataset, args.split)
    videos = [load_video(r) for r in records]
    if cfg.enable_motion_compensation and cfg.enable_motion_loss:
        missing = [v.name for v in videos if v.flow is None]
        if missing:
            raise ValueError(
                "motion loss is enabled but these videos have no flow directory: "
                f"{missing}; generate flow files or disable the motion loss"
            )
    if not any(len(v) >= schedule.clip_frames for v in videos):
        raise ValueError(
            f"the {args.preset!r} preset samples {schedule.clip_frames}-frame clips "
            "but no video is that long"
        )
    short = [v.name for v in videos
             if min(v.blur.shape[2], v.blur.shape[3]) < schedule.crop_size]
    if short:
        raise ValueError(
            f"the {args.preset!r} preset crops {schedule.crop_size}px windows "
            f"but these videos are smaller: {short}"
        )
    torch.manual_seed(args.seed)
    model = StackedModel(cfg).to(args.device)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    checkpoint_path = out / "checkpoint.pt"
    if isinstance(args.resume, str):
        src = Path(args.resume)
        if not src.is_file():
            raise FileNotFoundError(f"resume checkpoint not found: {src}")
        if src.resolve() != checkpoint_path.resolve():
            shutil.copy2(src, checkpoint_path)
    stats = train(
        model,
        videos,
        schedule,
        max_steps=args.steps,
        seed=args.seed,
        log_file=out / "train_log.jsonl",
        checkpoint_path=checkpoint_path,
        checkpoint_every=args.checkpoint_every,
        resume=args.resume is not None,
    )
    save_checkpoint(out / "model.pt", model)
    save_config(cfg, out / "config.json")
    print(
        f"trained {stats['steps']} steps in {stats['seconds']:.1f}s; "
        f"final loss {stats['total']:.5f}; model saved to {out / 'model.pt'}"
    )
    return 0


def cmd_infer(args: argparse.Namespace) -> int:
    model, _ = load_checkpoint(args.checkpoint, map_location=args.device)
    model = model.to(args.device)
    if args.precision == "half":
        model = model.half()
        model.cfg.precision = "half"
    elif args.precision == "full":
        model = model.float()
        model.cfg.precision = "full"
    in_dir = Path(args.in_dir)
    frame_paths = sorted(in_dir.glob("*.png"))
    if not frame_paths:
        raise ValueError(f"no .png frames found in {in_dir}")
    frames = torch.stack([load_image(p) for p in frame_paths])
    restored = model.run_video(frames)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for path, frame in zip(frame_paths, restored):
        save_image(out_dir / path.name, frame.clamp(0.0, 1.0))
    print(f"restored {len(frame_paths)} frames from {in_dir} into {out_dir}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    model, _ = load_checkpoint(args.checkpoint, map_location=args.device)
    model = model.to(args.device)
    records = ingest_dataset(args.dataset, args.split)
    report = evaluate_dataset(model, records, skip_frames=args.skip_frames)
    cols = ["name", "frames", "input_psnr", "psnr", "ssim", "align_psnr", "align_ssim", "epe"]
    rows = report["videos"] + [dict(report["aggregate"], name="aggregate")]
    table = [cols]
    for row in rows:
        table.append(
            [
                (
                    f"{row[c]:.3f}"
                    if isinstance(row.get(c), float) and row[c] == row[c]
                    else ("nan" if isinstance(row.get(c), float) else str(row.get(c, "")))
                )
                for c in cols
            ]
        )
    widths = [max(len(r[i]) for r in table) for i in range(len(cols))]
    for r in table:
        print("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(r)))
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=2) + "\n")
        print(f"report written to {args.out}")
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    if bool(args.checkpoint) == bool(args.config):
        raise ValueError("pass exactly one of --checkpoint or --config")
    if args.checkpoint:
        model, _ = load_checkpoint(args.checkpoint, map_location=args.device)
        model = model.to(args.device)
        cfg = model.cfg
    else:
        cfg = load_config(args.config)
        torch.manual_seed(args.seed)
        model = StackedModel(cfg).to(args.device)

    reports = []
    if args.sweep is not None:
        reports = stack_sweep(
            cfg,
            stacks=tuple(args.sweep) if args.sweep else (1, 2, 4, 10),
            height=args.height,
            width=args.width,
            iterations=args.iterations,
            warmup=args.warmup,
            device=args.device,
            seed=args.seed,
        )
    elif args.sync == "both":
        both = benchmark_sync_and_naive(
            model, args.height, args.width, args.iterations, args.warmup, seed=args.seed
        )
        reports = [both["sync"], both["naive"]]
    else:
        reports = [
            benchmark_latency(
                model,
                args.height,
                args.width,
                args.iterations,
                args.warmup,
                sync=args.sync == "on",
                seed=args.seed,
            )
        ]
    print(format_report(reports))
    if args.out:
        Path(args.out).write_text(json.dumps(reports, indent=2) + "\n")
        print(f"report written to {args.out}")
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    rows = args.rows.split(",") if args.rows else None
    base = load_config(args.config) if args.config else None
    report = run_ablation(
        args.dataset,
        grid=args.grid,
        rows=rows,
        base=base,
        steps=args.steps,
        seed=args.seed,
        holdout_frames=args.holdout_frames,
    )
    print(format_ablation(report))
    if args.out:
        save_ablation(report, args.out)
        print(f"report written to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mtdeblur",
        description="Stacked multi-task recurrent video deblurring toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    seed_default = _env_seed()
    device_default = _env_device()

    p = sub.add_parser("make-synthetic", help="generate a synthetic translating-texture dataset")
    p.add_argument("--out", required=True, help="dataset root directory")
    p.add_argument("--seed", type=int, default=seed_default)
    p.add_argument("--videos", type=int, default=4, help="number of training videos")
    p.add_argument("--test-videos", type=int, default=2)
    p.add_argument("--frames", type=int, default=24)
    p.add_argument("--size", type=int, default=64, help="square frame side, multiple of 4")
    p.add_argument("--speed", type=float, default=6.0, help="maximum velocity in px/frame")
    p.add_argument("--subframes", type=int, default=9, help="exposure subframes per blurry frame")
    p.set_defaults(func=cmd_make_synthetic)

    p = sub.add_parser("train", help="train a model on an ingested dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="output directory for checkpoints and logs")
    p.add_argument("--preset", choices=sorted(SCHEDULES), default="smoke")
    p.add_argument("--config", help="model config JSON; defaults to the analysis model")
    p.add_argument("--split", default="train")
    p.add_argument("--steps", type=int, default=None, help="stop after this many steps")
    p.add_argument("--checkpoint-every", type=int, default=1000)
    p.add_argument("--resume", nargs="?", const=True, default=None, metavar="CKPT",
                   help="resume training; optionally from a specific checkpoint file")
    p.add_argument("--seed", type=int, default=seed_default)
    p.add_argument("--device", default=device_default)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="restore frames from a directory of blurry PNGs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", dest="out_dir", required=True)
    p.add_argument("--precision", choices=["keep", "full", "half"], default="keep")
    p.add_argument("--device", default=device_default)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--skip-frames", type=int, default=0,
                   help="exclude this many leading frames per video from scoring")
    p.add_argument("--out", help="also write the report as JSON")
    p.add_argument("--device", default=device_default)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="measure per-frame latency")
    p.add_argument("--checkpoint")
    p.add_argument("--config", help="model config JSON (fresh random weights)")
    p.add_argument("--height", type=int, default=720)
    p.add_argument("--width", type=int, default=1280)
    p.add_argument("--iterations", type=int, default=30)
    p.add_argument("--warmup", type=int, default=5)
    p.add_argument("--sync", choices=["both", "on", "off"], default="both")
    p.add_argument("--sweep", type=int, nargs="*", metavar="N",
                   help="benchmark a sweep of stack counts (default 1 2 4 10)")
    p.add_argument("--out", help="also write the report as JSON")
    p.add_argument("--seed", type=int, default=seed_default)
    p.add_argument("--device", default=device_default)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("ablate", help="train and score a grid of config variants")
    p.add_argument("--dataset", required=True)
    p.add_argument("--grid", choices=sorted(GRIDS_HELP), default="table2")
    p.add_argument("--rows", help="comma-separated subset of rows to run")
    p.add_argument("--steps", type=int, default=400)
    p.add_argument("--holdout-frames", type=int, default=18)
    p.add_argument("--config", help="base model config JSON")
    p.add_argument("--out", help="also write the report as JSON")
    p.add_argument("--seed", type=int, default=seed_default)
    p.set_defaults(func=cmd_ablate)

    return parser


GRIDS_HELP = {"table1": grid_rows("table1"), "table2": grid_rows("table2")}


def main(argv: list[str] | None = None) -> int:
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
