"""Recurrent multi-task video deblurring with feature-matching motion compensation."""

from .ablate import format_ablation, grid_rows, run_ablation, save_ablation
from .bench import (
    benchmark_latency,
    benchmark_sync_and_naive,
    format_report,
    parameter_count,
    stack_sweep,
)
from .config import ModelConfig, default_lambdas, load_config, save_config, validate_config
from .data import (
    InMemoryVideo,
    VideoRecord,
    ingest_dataset,
    load_flow,
    load_image,
    load_video,
    make_synthetic,
    sample_clip,
    save_flow,
    save_image,
    truncate_video,
)
from .losses import deblur_loss, displacement_target, frame_loss, motion_loss
from .metrics import alignment_accuracy, end_point_error, evaluate_dataset, psnr, ssim
from .motion import (
    argmax_displacement,
    cost_volume,
    displacement_channels,
    motion_compensate,
    quarter_flow,
    upsample_displacement,
    warp_features,
    warp_valid_mask,
)
from .pipeline import (
    RecurrentState,
    StackedModel,
    load_checkpoint,
    pad_to_multiple,
    save_checkpoint,
)
from .train import SCHEDULES, TrainSchedule, get_schedule, train
from .unit import DetailNetwork, MultiTaskUnit, UnitOutputs

__all__ = [
    "InMemoryVideo",
    "ModelConfig",
    "RecurrentState",
    "SCHEDULES",
    "StackedModel",
    "TrainSchedule",
    "VideoRecord",
    "alignment_accuracy",
    "argmax_displacement",
    "benchmark_latency",
    "benchmark_sync_and_naive",
    "cost_volume",
    "deblur_loss",
    "default_lambdas",
    "displacement_channels",
    "displacement_target",
    "end_point_error",
    "evaluate_dataset",
    "format_ablation",
    "format_report",
    "frame_loss",
    "get_schedule",
    "grid_rows",
    "ingest_dataset",
    "load_checkpoint",
    "load_config",
    "load_flow",
    "load_image",
    "load_video",
    "make_synthetic",
    "motion_compensate",
    "motion_loss",
    "pad_to_multiple",
    "parameter_count",
    "psnr",
    "quarter_flow",
    "run_ablation",
    "sample_clip",
    "save_ablation",
    "save_checkpoint",
    "save_config",
    "save_flow",
    "save_image",
    "ssim",
    "stack_sweep",
    "train",
    "truncate_video",
    "upsample_displacement",
    "validate_config",
    "warp_features",
    "warp_valid_mask",
    "DetailNetwork",
    "MultiTaskUnit",
    "UnitOutputs",
]
