"""Pseudo-video composition.

A foreground clip sequence is stochastically re-scaled (strided re-sampling),
inserted into an unrelated background sequence, and the concatenation is
linearly re-sampled to a fixed length T. The foreground extent inside the
concatenation, shrunk by small random boundary offsets, is the surrogate
paragraph-level boundary label.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import FeatureSequence
from .intervals import Interval


class ComposeError(Exception):
    pass


@dataclass(frozen=True)
class ComposeConfig:
    t_clips: int
    rrs_stride_range: tuple[float, float] = (1.0, 3.0)
    rbs_fraction: float = 0.1

    def __post_init__(self):
        lo, hi = self.rrs_stride_range
        if self.t_clips < 2:
            raise ComposeError(f"t_clips must be >= 2, got {self.t_clips}")
        if not (0 < lo <= hi):
            raise ComposeError(f"bad stride range [{lo}, {hi}]")
        # an offset fraction of 0.5 or more could invert the pseudo interval
        if not (0.0 <= self.rbs_fraction < 0.5):
            raise ComposeError(f"rbs fraction must be in [0, 0.5), got {self.rbs_fraction}")


@dataclass(frozen=True)
class Provenance:
    fg_video_id: str
    bg_video_id: str
    insert_index: int
    stride: float
    rescale: float
    offset_start: float
    offset_end: float


@dataclass(frozen=True)
class PseudoComposition:
    features: FeatureSequence  # exactly T clips
    pseudo_interval: Interval
    provenance: Provenance


def rrs(fg: FeatureSequence, rng: np.random.Generator,
        stride_range: tuple[float, float]) -> tuple[FeatureSequence, float]:
    """Random re-sampling: pick stride s ~ U[lo, hi] and take the nearest-index
    rows at positions 0, s, 2s, ...; returns the re-scaled sequence and the
    length ratio r = out_len / in_len. Strides below 1 up-sample by repeating
    nearest rows."""
    lo, hi = stride_range
    stride = float(rng.uniform(lo, hi))
    out, r = rrs_with_stride(fg, stride)
    return out, r


def rrs_with_stride(fg: FeatureSequence, stride: float) -> tuple[FeatureSequence, float]:
    n = fg.num_clips
    count = max(1, math.ceil(n / stride))
    idx = np.minimum(np.floor(np.arange(count) * stride + 0.5).astype(int), n - 1)
    out = FeatureSequence(fg.values[idx].copy())
    return out, count / n


def nrs(seq: FeatureSequence, t_clips: int) -> FeatureSequence:
    """Normalized re-sampling to exactly t_clips rows by linear interpolation
    at cell-centered positions; an input already of length t_clips is copied
    unchanged."""
    if t_clips < 2:
        raise ComposeError(f"t_clips must be >= 2, got {t_clips}")
    n = seq.num_clips
    # output clip j is centered at (j + 0.5)/T of the normalized time axis
    u = (np.arange(t_clips) + 0.5) * (n / t_clips) - 0.5
    u = np.clip(u, 0.0, n - 1.0)
    lo = np.floor(u).astype(int)
    hi = np.minimum(lo + 1, n - 1)
    frac = (u - lo).astype(np.float32)[:, None]
    values = seq.values[lo] * (1.0 - frac) + seq.values[hi] * frac
    return FeatureSequence(values.astype(np.float32))


def attention_mask(pseudo_interval: Interval, t_clips: int) -> np.ndarray:
    """Binary mask over t_clips clips: 1 where the clip center falls inside
    the interval."""
    centers = (np.arange(t_clips) + 0.5) / t_clips
    return ((centers >= pseudo_interval.start) & (centers <= pseudo_interval.end)).astype(np.float32)


def compose_with(
    fg: FeatureSequence,
    bg_values: np.ndarray,
    insert_index: int,
    stride: float,
    offset_start: float,
    offset_end: float,
    t_clips: int,
    fg_video_id: str = "",
    bg_video_id: str = "",
) -> PseudoComposition:
    """Deterministic composition core; ``compose`` draws its parameters.

    ``bg_values`` may be empty (foreground-only pseudo video). Offsets are in
    re-scaled foreground clips and shrink the labeled interval from each side.
    """
    l_bg = bg_values.shape[0]
    if not (0 <= insert_index <= l_bg):
        raise ComposeError(f"insert index {insert_index} outside 0..{l_bg}")
    scaled, r = rrs_with_stride(fg, stride)
    rl = scaled.num_clips
    total = rl + l_bg
    parts = [bg_values[:insert_index], scaled.values, bg_values[insert_index:]]
    concat = FeatureSequence(np.concatenate([p for p in parts if p.shape[0]], axis=0))
    features = nrs(concat, t_clips)
    start = (insert_index + offset_start) / total
    end = (insert_index + rl - offset_end) / total
    if start > end:
        raise ComposeError(f"offsets ({offset_start}, {offset_end}) invert the pseudo interval")
    return PseudoComposition(
        features=features,
        pseudo_interval=Interval(start, end),
        provenance=Provenance(
            fg_video_id=fg_video_id,
            bg_video_id=bg_video_id,
            insert_index=insert_index,
            stride=stride,
            rescale=r,
            offset_start=offset_start,
            offset_end=offset_end,
        ),
    )


class PseudoComposer:
    """Draws composition parameters and builds pseudo videos.

    Keeps a call counter so the inference path can be audited to never touch
    composition.
    """

    def __init__(self, config: ComposeConfig):
        self.config = config
        self.calls = 0

    def compose(
        self,
        fg: FeatureSequence,
        bg: FeatureSequence,
        rng: np.random.Generator,
        fg_video_id: str = "fg",
        bg_video_id: str = "bg",
    ) -> PseudoComposition:
        if fg_video_id == bg_video_id:
            raise ComposeError(f"foreground and background are the same video {fg_video_id!r}")
        self.calls += 1
        cfg = self.config
        insert_index = int(rng.integers(0, bg.num_clips + 1))
        stride = float(rng.uniform(*cfg.rrs_stride_range))
        rl = max(1, math.ceil(fg.num_clips / stride))
        bound = cfg.rbs_fraction * rl
        offset_start = float(rng.uniform(0.0, bound))
        offset_end = float(rng.uniform(0.0, bound))
        return compose_with(
            fg, bg.values, insert_index, stride, offset_start, offset_end,
            cfg.t_clips, fg_video_id=fg_video_id, bg_video_id=bg_video_id,
        )
