"""Temporal interval algebra and sinusoidal position embeddings.

All timestamps are normalized to [0, 1]. Anchors are kept as (center, width)
pairs in unbounded logit space and squashed through a sigmoid when converted
to intervals, so additive refinement never leaves the valid domain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import Tensor


@dataclass(frozen=True)
class Interval:
    """A normalized temporal span with 0 <= start <= end <= 1."""

    start: float
    end: float

    def __post_init__(self):
        if not (0.0 <= self.start <= self.end <= 1.0):
            raise ValueError(f"invalid interval [{self.start}, {self.end}]")

    @property
    def length(self) -> float:
        return self.end - self.start

    @property
    def center(self) -> float:
        return 0.5 * (self.start + self.end)


@dataclass(frozen=True)
class CenterWidthBox:
    """Anchor box as (center, width) logits; any finite pair is valid."""

    center: float
    width: float


def iou(a: Interval, b: Interval) -> float:
    """Intersection over union of two intervals; 0 when the union is empty."""
    inter = max(0.0, min(a.end, b.end) - max(a.start, b.start))
    union = a.length + b.length - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def giou(a: Interval, b: Interval) -> float:
    """Generalized IoU: iou minus the hull fraction not covered by the union.

    Falls in (-1, 1]; equals iou(a, b) exactly when the hull of a and b is
    their union (i.e. the intervals touch or overlap).
    """
    inter = max(0.0, min(a.end, b.end) - max(a.start, b.start))
    union = a.length + b.length - inter
    hull = max(a.end, b.end) - min(a.start, b.start)
    if union <= 0.0:
        base = 0.0
    else:
        base = inter / union
    if hull <= 0.0:
        return base
    return base - (hull - union) / hull


def box_to_interval(box: CenterWidthBox) -> Interval:
    """Squash a logit-space box into a valid Interval (clamped to [0, 1])."""
    c = _sigmoid(box.center)
    w = _sigmoid(box.width)
    start = min(max(c - 0.5 * w, 0.0), 1.0)
    end = min(max(c + 0.5 * w, 0.0), 1.0)
    return Interval(start, end)


def interval_to_box(iv: Interval) -> CenterWidthBox:
    """Inverse of box_to_interval on its valid (non-clamped) domain."""
    if not (0.0 < iv.length < 1.0):
        raise ValueError(f"interval length {iv.length} outside (0, 1); logit undefined")
    if not (0.0 < iv.center < 1.0):
        raise ValueError(f"interval center {iv.center} outside (0, 1); logit undefined")
    return CenterWidthBox(_logit(iv.center), _logit(iv.length))


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _logit(p: float) -> float:
    return math.log(p / (1.0 - p))


# ---------------------------------------------------------------------------
# Tensor counterparts used inside losses (differentiable).
# ---------------------------------------------------------------------------

def span_iou(pred: Tensor, target: Tensor) -> Tensor:
    """IoU for (..., 2) span tensors holding (start, end)."""
    inter = (torch.minimum(pred[..., 1], target[..., 1])
             - torch.maximum(pred[..., 0], target[..., 0])).clamp(min=0)
    union = (pred[..., 1] - pred[..., 0]) + (target[..., 1] - target[..., 0]) - inter
    return inter / union.clamp(min=1e-9)


def span_giou(pred: Tensor, target: Tensor) -> Tensor:
    """Generalized IoU for (..., 2) span tensors."""
    inter = (torch.minimum(pred[..., 1], target[..., 1])
             - torch.maximum(pred[..., 0], target[..., 0])).clamp(min=0)
    union = (pred[..., 1] - pred[..., 0]) + (target[..., 1] - target[..., 0]) - inter
    hull = (torch.maximum(pred[..., 1], target[..., 1])
            - torch.minimum(pred[..., 0], target[..., 0])).clamp(min=1e-9)
    return inter / union.clamp(min=1e-9) - (hull - union) / hull


def boxes_to_spans(boxes: Tensor) -> Tensor:
    """Squash (..., 2) logit-space (center, width) boxes into valid spans."""
    c = torch.sigmoid(boxes[..., 0])
    w = torch.sigmoid(boxes[..., 1])
    start = (c - 0.5 * w).clamp(0.0, 1.0)
    end = (c + 0.5 * w).clamp(0.0, 1.0)
    return torch.stack([start, end], dim=-1)


def sinusoidal_embedding(positions: Tensor, dim: int, temperature: float = 10000.0) -> Tensor:
    """Sine/cosine embedding of normalized positions.

    positions: (n,) values in [0, 1], scaled by 2*pi before the frequency
    sweep so the full normalized range covers one base period. Even output
    channels are sines, odd channels cosines; row i depends only on
    positions[i].

    Returns (n, dim); dim must be even.
    """
    if dim % 2 != 0:
        raise ValueError(f"embedding dim must be even, got {dim}")
    if not torch.is_tensor(positions):
        positions = torch.as_tensor(positions, dtype=torch.get_default_dtype())
    half = dim // 2
    freq = temperature ** (
        torch.arange(half, dtype=positions.dtype, device=positions.device) * 2.0 / dim
    )
    angles = positions[:, None] * (2.0 * math.pi) / freq[None, :]  # (n, dim/2)
    emb = torch.zeros(positions.shape[0], dim, dtype=positions.dtype, device=positions.device)
    emb[:, 0::2] = torch.sin(angles)
    emb[:, 1::2] = torch.cos(angles)
    return emb


def embed_boxes(boxes: Tensor, dim: int) -> Tensor:
    """Embed (..., 2) logit-space boxes into dim-dimensional features.

    The squashed center and width each get dim/2 sinusoidal channels and are
    concatenated. Differentiable in the box logits.
    """
    if dim % 4 != 0:
        raise ValueError(f"box embedding dim must be divisible by 4, got {dim}")
    flat = boxes.reshape(-1, 2)
    c = torch.sigmoid(flat[:, 0])
    w = torch.sigmoid(flat[:, 1])
    emb = torch.cat([
        _sin_cos(c, dim // 2),
        _sin_cos(w, dim // 2),
    ], dim=-1)
    return emb.reshape(*boxes.shape[:-1], dim)


def _sin_cos(positions: Tensor, dim: int, temperature: float = 10000.0) -> Tensor:
    # same layout as sinusoidal_embedding but keeps the autograd graph of positions
    half = dim // 2
    freq = temperature ** (
        torch.arange(half, dtype=positions.dtype, device=positions.device) * 2.0 / dim
    )
    angles = positions[:, None] * (2.0 * math.pi) / freq[None, :]
    both = torch.stack([torch.sin(angles), torch.cos(angles)], dim=-1)  # (n, half, 2)
    return both.reshape(positions.shape[0], dim)
