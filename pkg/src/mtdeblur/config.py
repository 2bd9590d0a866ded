"""Model configuration, validation, and the flat JSON config file format."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

CONFIG_VERSION = 1

# The motion heads estimate displacements on features downsampled by this
# factor, and the evaluation protocol downsamples frames by the same factor.
# Other strides would silently break that correspondence, so it is fixed.
MOTION_STRIDE = 4


def default_lambdas(num_stacks: int) -> list[float]:
    """Per-stack deblurring loss weights: 0.1 for intermediate stacks, 1.0 for the last."""
    return [0.1] * (num_stacks - 1) + [1.0]


@dataclass
class ModelConfig:
    """Configuration of the stacked deblurring model.

    The defaults describe the 2-stack analysis model: 26 feature channels,
    maximum displacement 10, loss weights [0.1, 1.0], motion loss weight 0.01,
    and every architectural switch enabled.
    """

    num_stacks: int = 2
    feature_channels: int = 26
    max_displacement: int = 10
    motion_stride: int = MOTION_STRIDE
    alpha: float = 0.01
    lambdas: list[float] | None = None
    skip_matching: bool = False
    precision: str = "full"
    enable_residual_learning: bool = True
    enable_motion_compensation: bool = True
    enable_motion_loss: bool = True
    enable_structure_injection_addition: bool = True
    enable_motion_layer: bool = True

    def __post_init__(self):
        if self.lambdas is None:
            self.lambdas = default_lambdas(self.num_stacks)
        else:
            self.lambdas = [float(v) for v in self.lambdas]


def validate_config(cfg: ModelConfig) -> ModelConfig:
    """Check all configuration invariants; return the config unchanged if they hold.

    Raises:
        ValueError: on the first violated invariant.
    """
    if cfg.num_stacks < 1:
        raise ValueError(f"num_stacks must be >= 1, got {cfg.num_stacks}")
    if cfg.feature_channels < 1:
        raise ValueError(f"feature_channels must be >= 1, got {cfg.feature_channels}")
    if cfg.max_displacement < 1:
        raise ValueError(f"max_displacement must be >= 1, got {cfg.max_displacement}")
    if cfg.motion_stride != MOTION_STRIDE:
        raise ValueError(
            f"motion_stride is fixed at {MOTION_STRIDE} (got {cfg.motion_stride}); "
            "the displacement evaluation protocol assumes quarter-scale matching"
        )
    if len(cfg.lambdas) != cfg.num_stacks:
        raise ValueError(
            f"lambdas has {len(cfg.lambdas)} entries but num_stacks is {cfg.num_stacks}"
        )
    if any(lam <= 0 for lam in cfg.lambdas):
        raise ValueError(f"all lambdas must be positive, got {cfg.lambdas}")
    if cfg.alpha < 0:
        raise ValueError(f"alpha must be non-negative, got {cfg.alpha}")
    if cfg.precision not in ("full", "half"):
        raise ValueError(f"precision must be 'full' or 'half', got {cfg.precision!r}")
    return cfg


def config_to_dict(cfg: ModelConfig) -> dict:
    d = {"config_version": CONFIG_VERSION}
    d.update(dataclasses.asdict(cfg))
    return d


def config_from_dict(d: dict) -> ModelConfig:
    """Build and validate a config from a flat dict; unknown keys are errors."""
    d = dict(d)
    version = d.pop("config_version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ValueError(f"unsupported config_version {version}, expected {CONFIG_VERSION}")
    known = {f.name for f in dataclasses.fields(ModelConfig)}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return validate_config(ModelConfig(**d))


def save_config(cfg: ModelConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(config_to_dict(cfg), indent=2) + "\n")


def load_config(path: str | Path) -> ModelConfig:
    return config_from_dict(json.loads(Path(path).read_text()))
