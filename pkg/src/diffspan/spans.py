"""Geometry of normalized 1-D temporal spans.

A span is a trailing-dim-2 tensor ``(center, width)`` with both components
expressed as fractions of the video duration. ``(start, end)`` intervals
appear only at I/O and metric boundaries.
"""

from __future__ import annotations

import torch
from torch import Tensor

# Floor applied to widths before any IoU/gIoU computation; avoids 0/0 on
# degenerate spans.
WIDTH_EPS = 1e-6


def to_interval(spans: Tensor) -> Tensor:
    """(center, width) -> (start, end), same shape."""
    c, w = spans.unbind(-1)
    return torch.stack([c - 0.5 * w, c + 0.5 * w], dim=-1)


def from_interval(intervals: Tensor) -> Tensor:
    """(start, end) -> (center, width); rejects end < start."""
    s, e = intervals.unbind(-1)
    if (e < s).any():
        raise ValueError("interval end < start")
    return torch.stack([(s + e) / 2, e - s], dim=-1)


def scale_up(spans: Tensor, scale: float) -> Tensor:
    """Map components from [0, 1] to the diffusion domain [-scale, scale]."""
    return (2.0 * spans - 1.0) * scale


def scale_down(values: Tensor, scale: float) -> Tensor:
    """Clamp to [-scale, scale], then map back to [0, 1]."""
    return (values.clamp(-scale, scale) / scale + 1.0) / 2.0


def clamp_unit(spans: Tensor) -> Tensor:
    """Clamp the derived interval into [0, 1] and floor the width.

    Used only at final output and inside metrics; intermediate diffusion
    states stay unclamped in span space.
    """
    se = to_interval(spans).clamp(0.0, 1.0)
    out = from_interval(se)
    c, w = out.unbind(-1)
    return torch.stack([c, w.clamp_min(WIDTH_EPS)], dim=-1)


def _inter_union_hull(a: Tensor, b: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    wa = a[..., 1].clamp_min(WIDTH_EPS)
    wb = b[..., 1].clamp_min(WIDTH_EPS)
    sa, ea = a[..., 0] - 0.5 * wa, a[..., 0] + 0.5 * wa
    sb, eb = b[..., 0] - 0.5 * wb, b[..., 0] + 0.5 * wb
    inter = (torch.minimum(ea, eb) - torch.maximum(sa, sb)).clamp_min(0.0)
    union = wa + wb - inter
    hull = torch.maximum(ea, eb) - torch.minimum(sa, sb)
    return inter, union, hull


def iou(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise interval IoU of two (center, width) span tensors."""
    inter, union, _ = _inter_union_hull(a, b)
    # rounding can push inter a hair past union when the spans coincide
    return (inter / union).clamp(0.0, 1.0)


def giou_loss(a: Tensor, b: Tensor) -> Tensor:
    """1 - gIoU, where gIoU = IoU - |hull \\ union| / |hull|; range [0, 2]."""
    inter, union, hull = _inter_union_hull(a, b)
    giou = (inter / union).clamp(0.0, 1.0) - ((hull - union) / hull).clamp(0.0, 1.0)
    return 1.0 - giou


def pairwise_iou(a: Tensor, b: Tensor) -> Tensor:
    """(N, 2) x (M, 2) -> (N, M) IoU matrix."""
    return iou(a[:, None, :], b[None, :, :])


def pairwise_giou_loss(a: Tensor, b: Tensor) -> Tensor:
    """(N, 2) x (M, 2) -> (N, M) gIoU-loss matrix."""
    return giou_loss(a[:, None, :], b[None, :, :])
