"""Dataset layout, image/flow file IO, synthetic data, and clip sampling.

A dataset root contains ``train/`` and ``test/`` splits. Each split holds one
directory per video:

    <root>/<split>/<video>/blur/frame_00000.png   blurry input frames
    <root>/<split>/<video>/gt/frame_00000.png     sharp ground-truth frames
    <root>/<split>/<video>/flow/frame_00001.flow  optional ground-truth flow

Frames are 0-indexed. ``flow/frame_t.flow`` (t >= 1) stores, for every pixel
of frame t, the displacement toward its matching content in frame t-1, as a
binary field (see ``save_flow``). Real footage usually has no flow directory;
the synthetic generator always writes one.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

FLOW_MAGIC = b"FLOW"
FLOW_VERSION = 1
FLOW_SCALES = {"full": 0, "quarter": 1}


def load_image(path: str | os.PathLike) -> torch.Tensor:
    """Read an image file into a float32 (3, H, W) tensor in [0, 1]."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    return torch.from_numpy(arr).permute(2, 0, 1).contiguous()


def save_image(path: str | os.PathLike, image: torch.Tensor) -> None:
    """Write a (3, H, W) tensor in [0, 1] as an 8-bit PNG (values are clamped)."""
    if image.dim() != 3 or image.shape[0] != 3:
        raise ValueError(f"expected (3, H, W) image, got {tuple(image.shape)}")
    arr = (image.detach().float().clamp(0, 1) * 255.0).round().to(torch.uint8)
    Image.fromarray(arr.permute(1, 2, 0).cpu().numpy()).save(path)


def save_flow(path: str | os.PathLike, flow: np.ndarray | torch.Tensor, scale: str = "full") -> None:
    """Write a (2, H, W) displacement field as a little-endian binary file.

    Layout: magic ``FLOW``, uint32 version, uint32 scale tag (0 full
    resolution, 1 quarter resolution), uint32 height, uint32 width, then the
    dx plane and the dy plane as float32.
    """
    if isinstance(flow, torch.Tensor):
        flow = flow.detach().cpu().numpy()
    flow = np.asarray(flow, dtype=np.float32)
    if flow.ndim != 3 or flow.shape[0] != 2:
        raise ValueError(f"expected (2, H, W) flow, got {flow.shape}")
    if scale not in FLOW_SCALES:
        raise ValueError(f"scale must be one of {sorted(FLOW_SCALES)}, got {scale!r}")
    _, h, w = flow.shape
    with open(path, "wb") as fh:
        fh.write(FLOW_MAGIC)
        fh.write(struct.pack("<IIII", FLOW_VERSION, FLOW_SCALES[scale], h, w))
        fh.write(flow.astype("<f4").tobytes())


def load_flow(path: str | os.PathLike) -> tuple[torch.Tensor, str]:
    """Read a flow file; returns (float32 (2, H, W) tensor, scale name)."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != FLOW_MAGIC:
            raise ValueError(f"{path} is not a flow file (bad magic {magic!r})")
        version, scale_tag, h, w = struct.unpack("<IIII", fh.read(16))
        if version != FLOW_VERSION:
            raise ValueError(f"unsupported flow file version {version}")
        names = {v: k for k, v in FLOW_SCALES.items()}
        if scale_tag not in names:
            raise ValueError(f"unknown flow scale tag {scale_tag}")
        data = np.frombuffer(fh.read(2 * h * w * 4), dtype="<f4")
    if data.size != 2 * h * w:
        raise ValueError(f"{path} is truncated")
    flow = torch.from_numpy(data.reshape(2, h, w).copy())
    return flow, names[scale_tag]


@dataclass
class VideoRecord:
    """Paths for one video: parallel frame lists plus optional flow files."""

    name: str
    blur: list[Path]
    gt: list[Path]
    flow: dict[int, Path] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.blur)


def _indexed_files(directory: Path, suffix: str) -> dict[int, Path]:
    out = {}
    for p in sorted(directory.glob(f"frame_*{suffix}")):
        out[int(p.stem.split("_")[1])] = p
    return out


def ingest_dataset(root: str | os.PathLike, split: str) -> list[VideoRecord]:
    """Scan ``<root>/<split>`` and validate its layout.

    Blur and ground-truth frames must be contiguous from index 0 and agree in
    count; flow files, when present, must target indices in [1, T-1].
    """
    split_dir = Path(root) / split
    if not split_dir.is_dir():
        raise FileNotFoundError(f"no such split: {split_dir}")
    records = []
    for video_dir in sorted(p for p in split_dir.iterdir() if p.is_dir()):
        blur = _indexed_files(video_dir / "blur", ".png")
        gt = _indexed_files(video_dir / "gt", ".png")
        if not blur:
            raise ValueError(f"{video_dir} has no blur frames")
        t = len(blur)
        if sorted(blur) != list(range(t)):
            raise ValueError(f"{video_dir} blur frames are not contiguous from 0")
        if sorted(gt) != list(range(t)):
            raise ValueError(f"{video_dir} gt frames do not match blur frames")
        flow = {}
        flow_dir = video_dir / "flow"
        if flow_dir.is_dir():
            flow = _indexed_files(flow_dir, ".flow")
            bad = [i for i in flow if not 1 <= i < t]
            if bad:
                raise ValueError(f"{video_dir} flow indices out of range: {bad}")
        records.append(
            VideoRecord(
                name=video_dir.name,
                blur=[blur[i] for i in range(t)],
                gt=[gt[i] for i in range(t)],
                flow=flow,
            )
        )
    if not records:
        raise ValueError(f"{split_dir} contains no videos")
    return records


@dataclass
class InMemoryVideo:
    """One fully loaded video; flow[t] maps frame t back to frame t-1.

    flow[0] is zero by the duplicated-first-frame convention. Videos without
    flow files have ``flow=None``.
    """

    name: str
    blur: torch.Tensor
    gt: torch.Tensor
    flow: torch.Tensor | None

    def __len__(self) -> int:
        return self.blur.shape[0]


def load_video(record: VideoRecord) -> InMemoryVideo:
    blur = torch.stack([load_image(p) for p in record.blur])
    gt = torch.stack([load_image(p) for p in record.gt])
    flow = None
    t, _, h, w = blur.shape
    if record.flow:
        flow = torch.zeros(t, 2, h, w)
        for i in range(1, t):
            if i not in record.flow:
                raise ValueError(f"video {record.name} is missing flow for frame {i}")
            f, scale = load_flow(record.flow[i])
            if scale != "full":
                raise ValueError(f"video {record.name} flow {i} is not full resolution")
            if f.shape[1:] != (h, w):
                raise ValueError(f"video {record.name} flow {i} size mismatch")
            flow[i] = f
    return InMemoryVideo(name=record.name, blur=blur, gt=gt, flow=flow)


def truncate_video(video: InMemoryVideo, frames: int) -> InMemoryVideo:
    """View of the first ``frames`` frames, e.g. to hold out a video's tail."""
    if not 1 <= frames <= len(video):
        raise ValueError(f"cannot truncate {len(video)}-frame video to {frames}")
    return InMemoryVideo(
        name=video.name,
        blur=video.blur[:frames],
        gt=video.gt[:frames],
        flow=video.flow[:frames] if video.flow is not None else None,
    )


def sample_clip(
    videos: list[InMemoryVideo],
    clip_frames: int,
    crop_size: int,
    rng: np.random.Generator,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Randomly crop a training clip: (blur, gt, flow) of shape (T, *, c, c).

    Picks a video, a start frame, and a spatial window. The flow of the
    clip's first frame is replaced by zeros, matching the duplicated-frame
    initialization of the recurrent state. Requires flow on every video.
    """
    if crop_size % 4:
        raise ValueError(f"crop_size must be a multiple of 4, got {crop_size}")
    candidates = [v for v in videos if len(v) >= clip_frames]
    if not candidates:
        raise ValueError(f"no video has {clip_frames} frames")
    video = candidates[rng.integers(len(candidates))]
    if video.flow is None:
        raise ValueError(f"video {video.name} has no ground-truth flow")
    _, _, h, w = video.blur.shape
    if h < crop_size or w < crop_size:
        raise ValueError(f"video {video.name} is smaller than the {crop_size}px crop")
    t0 = int(rng.integers(len(video) - clip_frames + 1))
    y0 = int(rng.integers(h - crop_size + 1))
    x0 = int(rng.integers(w - crop_size + 1))
    sl = (slice(t0, t0 + clip_frames), slice(None), slice(y0, y0 + crop_size), slice(x0, x0 + crop_size))
    blur = video.blur[sl].clone()
    gt = video.gt[sl].clone()
    flow = video.flow[sl].clone()
    flow[0] = 0.0
    return blur, gt, flow


def bilinear_crop(canvas: torch.Tensor, top: float, left: float, height: int, width: int) -> torch.Tensor:
    """Sample a (C, height, width) window of ``canvas`` at a subpixel offset."""
    ys = torch.arange(height, dtype=torch.float64) + top
    xs = torch.arange(width, dtype=torch.float64) + left
    y0 = ys.floor().long()
    x0 = xs.floor().long()
    fy = (ys - y0).float().view(1, height, 1)
    fx = (xs - x0).float().view(1, 1, width)
    ch, cw = canvas.shape[1], canvas.shape[2]
    if y0.min() < 0 or x0.min() < 0 or y0.max() + 1 >= ch or x0.max() + 1 >= cw:
        raise ValueError("crop window reads outside the canvas")
    rows0 = canvas[:, y0, :]
    rows1 = canvas[:, y0 + 1, :]
    top_row = rows0[:, :, x0] * (1 - fx) + rows0[:, :, x0 + 1] * fx
    bot_row = rows1[:, :, x0] * (1 - fx) + rows1[:, :, x0 + 1] * fx
    return top_row * (1 - fy) + bot_row * fy


def _textured_canvas(height: int, width: int, rng: np.random.Generator) -> torch.Tensor:
    """Random RGB canvas mixing coarse blobs and fine texture, values in [0.05, 0.95].

    Each level places one random value per ``cell``-pixel patch and upsamples
    bilinearly; the fine levels give motion blur something to destroy and
    feature matching something to lock onto.
    """
    levels = [(6, 0.8), (16, 0.2)]
    canvas = torch.zeros(3, height, width)
    for cell, weight in levels:
        gh, gw = max(2, round(height / cell)), max(2, round(width / cell))
        base = torch.from_numpy(rng.random((3, gh, gw)).astype(np.float32))
        up = F.interpolate(base.unsqueeze(0), size=(height, width), mode="bilinear", align_corners=False)
        canvas += weight * up.squeeze(0)
    lo, hi = canvas.min(), canvas.max()
    return 0.05 + 0.9 * (canvas - lo) / (hi - lo + 1e-12)


def make_synthetic(
    root: str | os.PathLike,
    train_videos: int = 4,
    test_videos: int = 2,
    frames: int = 24,
    height: int = 64,
    width: int = 64,
    max_speed: float = 6.0,
    blur_steps: int = 9,
    seed: int = 0,
) -> None:
    """Generate a translating-texture dataset with exact ground-truth flow.

    Each video is a camera panning over a random textured canvas with
    per-axis sinusoidal velocity of amplitude up to ``max_speed`` px/frame.
    The blurry frame averages ``blur_steps`` subframes spread across the
    frame's motion; the sharp frame is the mid-exposure crop, so the flow
    between consecutive sharp frames is the constant inter-frame displacement.
    """
    if frames < 2:
        raise ValueError("need at least 2 frames per video")
    if blur_steps < 1:
        raise ValueError("blur_steps must be >= 1")
    if height % 4 or width % 4:
        raise ValueError(
            f"frame sides must be multiples of 4, got {height}x{width}"
        )
    rng = np.random.default_rng(seed)
    root = Path(root)
    for split, count in (("train", train_videos), ("test", test_videos)):
        for v in range(count):
            _write_synthetic_video(
                root / split / f"video_{v:03d}", frames, height, width, max_speed, blur_steps, rng, v
            )


def _write_synthetic_video(
    video_dir: Path,
    frames: int,
    height: int,
    width: int,
    max_speed: float,
    blur_steps: int,
    rng: np.random.Generator,
    index: int = 0,
) -> None:
    # The camera pans along a path that turns mid-video: per-axis velocity =
    # whole-cell pan drift plus a small sub-pixel sinusoid, bounded by
    # max_speed. Keeping the drift on the 4px matching grid leaves the
    # quarter-resolution correspondence well-posed while the blur length
    # (|v| px per frame) stays substantial. The pan starts on one of the four
    # diagonals (cycled with the video index so small datasets cover distinct
    # motions) and smoothly rotates 90 degrees halfway through, so motion
    # must be estimated per frame rather than memorized per video. v[t] is
    # the displacement from frame t-1 to frame t; v[0] (only used for the
    # first frame's blur) copies v[1].
    cells = int(max_speed // 4)
    drift_a = np.zeros(2)
    if cells >= 1:
        signs = ((1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0))[index % 4]
        drift_a = 4.0 * rng.integers(1, cells + 1, size=2) * np.asarray(signs)
    drift_b = np.array([-drift_a[1], drift_a[0]])
    t_f = np.arange(frames, dtype=np.float64)

    def smoothstep(x: np.ndarray) -> np.ndarray:
        x = np.clip(x, 0.0, 1.0)
        return x * x * (3.0 - 2.0 * x)

    gate = smoothstep((t_f - (frames // 2 - 1)) / 2.0)[:, None]
    drift = drift_a + (drift_b - drift_a) * gate
    headroom = np.maximum(max_speed - np.max(np.abs(drift), axis=0), 0.0)
    amp = rng.uniform(0.5, 1.0, size=2) * np.minimum(0.4, headroom)
    freq = rng.uniform(0.06, 0.16, size=2)
    phase = rng.uniform(0, 2 * np.pi, size=2)
    velocity = drift + amp * np.sin(2 * np.pi * freq * t_f[:, None] + phase)
    velocity[0] = velocity[1]
    positions = np.zeros((frames, 2))
    positions[1:] = np.cumsum(velocity[1:], axis=0)

    # Canvas sized to cover every exposure subcrop with bilinear slack.
    reach = np.abs(velocity).max(axis=0) * 0.5 + 2.0
    lo = positions.min(axis=0) - reach
    hi = positions.max(axis=0) + reach
    margin_x, margin_y = -lo[0], -lo[1]
    canvas_w = int(np.ceil(hi[0] - lo[0])) + width + 4
    canvas_h = int(np.ceil(hi[1] - lo[1])) + height + 4
    canvas = _textured_canvas(canvas_h, canvas_w, rng)

    for sub in ("blur", "gt", "flow"):
        (video_dir / sub).mkdir(parents=True, exist_ok=True)
    exposures = np.linspace(-0.5, 0.5, blur_steps) if blur_steps > 1 else np.zeros(1)
    for t in range(frames):
        cx = positions[t, 0] + margin_x + 1.0
        cy = positions[t, 1] + margin_y + 1.0
        gt = bilinear_crop(canvas, cy, cx, height, width)
        if velocity[t, 0] == 0.0 and velocity[t, 1] == 0.0:
            blur = gt
        else:
            acc = torch.zeros_like(gt)
            for a in exposures:
                acc += bilinear_crop(
                    canvas, cy + a * velocity[t, 1], cx + a * velocity[t, 0], height, width
                )
            blur = acc / len(exposures)
        save_image(video_dir / "gt" / f"frame_{t:05d}.png", gt)
        save_image(video_dir / "blur" / f"frame_{t:05d}.png", blur)
        if t >= 1:
            flow = np.empty((2, height, width), dtype=np.float32)
            flow[0] = velocity[t, 0]
            flow[1] = velocity[t, 1]
            save_flow(video_dir / "flow" / f"frame_{t:05d}.flow", flow, scale="full")
