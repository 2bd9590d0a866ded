"""Non-learnable feature-matching motion compensation.

All operations are pure functions over batched tensors. Feature maps are
(B, C, H, W); displacement maps are (B, 2, H, W) integer tensors whose
channel 0 holds the horizontal component dx and channel 1 the vertical
component dy. A displacement (dx, dy) at pixel x means "the matching
content sits at x + (dx, dy) in the previous frame's map".

Cost volumes are (B, (2D+1)^2, H, W); channel k encodes the displacement
(dx, dy) with k = (dy + D) * (2D + 1) + (dx + D).
"""

from __future__ import annotations

import torch
import torch.nn.functional as F

# Guard for the cosine-similarity denominator; an all-zero feature vector
# (e.g. a zero-padded out-of-map position) yields similarity 0.
COSINE_EPS = 1e-8


def displacement_channels(max_displacement: int) -> int:
    return (2 * max_displacement + 1) ** 2


def cost_volume(cur: torch.Tensor, prev: torch.Tensor, max_displacement: int) -> torch.Tensor:
    """Windowed cosine-similarity cost volume between two feature maps.

    For every pixel x and displacement d in [-D, D]^2, computes the cosine
    similarity between the channel vector of ``cur`` at x and the channel
    vector of ``prev`` at x + d. Positions outside the map are treated as
    zero vectors, so their similarity is 0.

    Args:
        cur: current features, (B, C, H, W).
        prev: previous features, same shape as ``cur``.
        max_displacement: search radius D >= 1.

    Returns:
        (B, (2D+1)^2, H, W) tensor with entries in [-1, 1].
    """
    if cur.shape != prev.shape:
        raise ValueError(f"feature shapes differ: {tuple(cur.shape)} vs {tuple(prev.shape)}")
    if max_displacement < 1:
        raise ValueError(f"max_displacement must be >= 1, got {max_displacement}")
    b, c, h, w = cur.shape
    d = max_displacement
    side = 2 * d + 1

    norm_cur = torch.linalg.vector_norm(cur, dim=1, keepdim=True)
    norm_prev = torch.linalg.vector_norm(prev, dim=1, keepdim=True)
    prev_pad = F.pad(prev, (d, d, d, d))
    norm_prev_pad = F.pad(norm_prev, (d, d, d, d))

    # One iteration per vertical offset; all horizontal offsets of that row
    # are handled at once through an overlapping-window view, which keeps the
    # transient memory at a single row band instead of the full (2D+1)^2 set.
    cur_col = cur.unsqueeze(-1)
    norm_cur_col = norm_cur.unsqueeze(-1)
    rows = []
    for dy in range(-d, d + 1):
        shifted = prev_pad[:, :, d + dy : d + dy + h, :].unfold(3, side, 1)
        shifted_norm = norm_prev_pad[:, :, d + dy : d + dy + h, :].unfold(3, side, 1)
        dot = (cur_col * shifted).sum(dim=1)
        denom = (norm_cur_col * shifted_norm).clamp_min(COSINE_EPS).squeeze(1)
        rows.append(dot / denom)
    # rows: (2D+1) tensors of (B, H, W, 2D+1) with dx fastest; channel order
    # k = (dy+D)*(2D+1) + (dx+D).
    volume = torch.stack(rows, dim=1)
    return volume.permute(0, 1, 4, 2, 3).reshape(b, side * side, h, w)


def argmax_displacement(volume: torch.Tensor, max_displacement: int) -> torch.Tensor:
    """Decode the per-pixel displacement of maximal similarity.

    Ties are broken toward the smallest channel index. Output is an integer
    (B, 2, H, W) tensor with dx in channel 0 and dy in channel 1.
    """
    d = max_displacement
    side = 2 * d + 1
    if volume.shape[1] != side * side:
        raise ValueError(
            f"cost volume has {volume.shape[1]} channels, expected {side * side} for D={d}"
        )
    # torch.argmax returns the first maximal index, which is the tie rule we want.
    idx = volume.argmax(dim=1)
    dy = idx.div(side, rounding_mode="floor") - d
    dx = idx.remainder(side) - d
    return torch.stack([dx, dy], dim=1)


def upsample_displacement(disp: torch.Tensor, factor: int = 4) -> torch.Tensor:
    """Nearest-neighbor upsample a displacement map and rescale its vectors.

    output(x) = factor * disp(floor(x / factor))
    """
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    if factor == 1:
        return disp
    up = disp.repeat_interleave(factor, dim=2).repeat_interleave(factor, dim=3)
    return up * factor


def quarter_flow(flow: torch.Tensor, stride: int = 4) -> torch.Tensor:
    """Subsample a full-resolution flow field and rescale its vectors.

    The inverse of :func:`upsample_displacement`: keeps every ``stride``-th
    pixel and divides the vectors by ``stride``. Works on float flow fields
    as well as integer displacement maps (the result is float).
    """
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    return flow[:, :, ::stride, ::stride].float() / stride


def warp_valid_mask(disp: torch.Tensor, height: int, width: int) -> torch.Tensor:
    """Boolean (B, H, W) mask of pixels whose displaced read stays inside the map."""
    xs = torch.arange(width, device=disp.device).view(1, 1, width) + disp[:, 0]
    ys = torch.arange(height, device=disp.device).view(1, height, 1) + disp[:, 1]
    return (xs >= 0) & (xs < width) & (ys >= 0) & (ys < height)


def warp_features(prev: torch.Tensor, disp: torch.Tensor) -> torch.Tensor:
    """Gather ``prev`` along an integer displacement map.

    output(x) = prev(x + disp(x)); reads outside the map yield zero vectors.
    Displacements are integral by construction, so this is a pure gather
    with no interpolation. Gradients flow into the gathered values of
    ``prev`` but not through the (integer) displacements.
    """
    b, c, h, w = prev.shape
    if disp.shape[0] != b or disp.shape[1] != 2 or disp.shape[2:] != (h, w):
        raise ValueError(
            f"displacement shape {tuple(disp.shape)} does not match features {tuple(prev.shape)}"
        )
    xs = torch.arange(w, device=prev.device).view(1, 1, w) + disp[:, 0]
    ys = torch.arange(h, device=prev.device).view(1, h, 1) + disp[:, 1]
    valid = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
    flat = ys.clamp(0, h - 1) * w + xs.clamp(0, w - 1)
    index = flat.reshape(b, 1, h * w).expand(b, c, h * w)
    gathered = prev.reshape(b, c, h * w).gather(2, index).reshape(b, c, h, w)
    return gathered * valid.unsqueeze(1).to(prev.dtype)


def motion_compensate(
    cur_injected: torch.Tensor,
    prev_injected: torch.Tensor,
    prev_final_detail: torch.Tensor,
    max_displacement: int,
    stride: int = 4,
    reuse: torch.Tensor | None = None,
) -> tuple[torch.Tensor, torch.Tensor | None, torch.Tensor]:
    """Full matching pipeline: cost volume -> argmax -> upsample -> warp.

    When ``reuse`` (a full-resolution displacement map from an earlier stack)
    is given, the matching step is skipped entirely: the reused map is applied
    as-is and no cost volume is produced, so the stack contributes nothing to
    the motion loss.

    Returns:
        (warped features, cost volume or None, full-resolution displacement map)
    """
    if reuse is not None:
        if reuse.shape[2:] != prev_final_detail.shape[2:]:
            raise ValueError(
                f"reused displacement {tuple(reuse.shape)} does not match "
                f"features {tuple(prev_final_detail.shape)}"
            )
        return warp_features(prev_final_detail, reuse), None, reuse

    volume = cost_volume(cur_injected, prev_injected, max_displacement)
    coarse = argmax_displacement(volume, max_displacement)
    disp = upsample_displacement(coarse, stride)
    if disp.shape[2:] != prev_final_detail.shape[2:]:
        raise ValueError(
            f"upsampled displacement {tuple(disp.shape)} does not match "
            f"features {tuple(prev_final_detail.shape)}"
        )
    return warp_features(prev_final_detail, disp), volume, disp
