"""Training objectives.

Six weak-supervision losses plus the fully-supervised loss used on labeled
samples: boundary regression gated on attention self-consistency, ordering
hinges on attention centroids and anchor centers, concept multi-label BCE,
cross-branch cosine consistency with stop-gradients, and in-mask attention
log-mass. All functions are pure in their tensor inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor

from .config import LossWeights
from .decoder import DecoderState, attention_centroid, attention_sum
from .intervals import Interval, boxes_to_spans, span_giou

ATTENTION_MASS_FLOOR = 1e-8


@dataclass
class BranchOutputs:
    """Everything one branch forward contributes to the losses."""

    branch: str            # "augmentation" | "inference"
    state: DecoderState
    spans: Tensor          # (N+1, 2) predicted spans; row 0 is the paragraph

    @property
    def num_sentences(self) -> int:
        return self.spans.shape[0] - 1


@dataclass
class StepLabels:
    pseudo_interval: Interval
    paragraph_concepts: Tensor        # (K,)
    sentence_concepts: Tensor         # (N, K)
    gt_intervals: tuple[Interval, ...] | None = None


def _as_span(x) -> Tensor:
    if isinstance(x, Interval):
        return torch.tensor([x.start, x.end], dtype=torch.get_default_dtype())
    return x


def regression_terms(pred, target) -> Tensor:
    """L1 plus (1 - GIoU); nonnegative, zero only at an exact match."""
    pred, target = _as_span(pred), _as_span(target)
    target = target.to(pred.dtype)
    l1 = (pred - target).abs().sum()
    return l1 + (1.0 - span_giou(pred, target))


def self_consistent_regression(pred, target, s_att: float, beta: float) -> Tensor:
    """Boundary regression applied only when the in-interval attention mass
    exceeds beta; the gate is a plain comparison and carries no gradient."""
    pred = _as_span(pred)
    if float(s_att) <= beta:
        return torch.zeros((), dtype=pred.dtype, device=pred.device)
    return regression_terms(pred, target)


def order_guided_attention(state: DecoderState, delta_m: float) -> Tensor:
    """Hinge on last-layer attention centroids of adjacent sentence rows:
    each later sentence's centroid must lead by at least delta_m * T clips."""
    attn = state.cross_attention[-1]
    n_sent = attn.shape[0] - 1
    if n_sent < 2:
        return torch.zeros((), dtype=attn.dtype, device=attn.device)
    t_clips = attn.shape[1]
    centroids = torch.stack([attention_centroid(state, row) for row in range(1, n_sent + 1)])
    margin = delta_m * t_clips
    gaps = margin + centroids[:-1] - centroids[1:]
    return F.relu(gaps).sum()


def concept_loss(logits: Tensor, paragraph_labels: Tensor, sentence_labels: Tensor) -> Tensor:
    """Per-concept mean BCE; the sentence term averages over sentences so the
    two terms stay comparable for any N."""
    para = F.binary_cross_entropy_with_logits(
        logits[0], paragraph_labels.to(logits.dtype), reduction="mean")
    sent = F.binary_cross_entropy_with_logits(
        logits[1:], sentence_labels.to(logits.dtype), reduction="mean")
    return para + sent


def cross_branch(aug_feats: Tensor, inf_feats: Tensor) -> Tensor:
    """Cosine consistency between the branches' decoder output features.
    Sentence rows pull the augmentation side toward the stopped inference
    side; the paragraph row pulls the inference side toward the stopped
    augmentation side."""
    sent = 1.0 - F.cosine_similarity(aug_feats[1:], inf_feats[1:].detach(), dim=-1)
    para = 1.0 - F.cosine_similarity(
        aug_feats[0].detach(), inf_feats[0], dim=-1)
    return sent.mean() + para


def anchor_ranking(state: DecoderState, d: float) -> Tensor:
    """Hinge on temporal centers of the final sentence anchors: adjacent
    centers must ascend with margin d."""
    anchors = state.anchors[-1][1:]
    if anchors.shape[0] < 2:
        return torch.zeros((), dtype=anchors.dtype, device=anchors.device)
    spans = boxes_to_spans(anchors)
    centers = 0.5 * (spans[:, 0] + spans[:, 1])
    return F.relu(d + centers[:-1] - centers[1:]).sum()


def pseudo_attention(state: DecoderState, mask: Tensor) -> Tensor:
    """Negative mean log of the paragraph row's in-mask attention mass across
    all decoder layers; mass floored before the log so a pathological
    attention map still yields a finite loss."""
    mask = mask.to(state.cross_attention[0].dtype)
    losses = []
    for attn in state.cross_attention:
        mass = (attn[0] * mask).sum().clamp(min=ATTENTION_MASS_FLOOR)
        losses.append(-torch.log(mass))
    return torch.stack(losses).mean()


def fully_supervised(outputs: BranchOutputs, gt_intervals: tuple[Interval, ...]) -> Tensor:
    """Per-sentence regression against ground truth plus the per-sentence
    in-mask attention log-mass, summed over sentences."""
    if gt_intervals is None:
        raise ValueError("fully-supervised loss needs ground-truth intervals")
    state = outputs.state
    positions = state.memory_positions
    total = torch.zeros((), dtype=outputs.spans.dtype, device=outputs.spans.device)
    for j, gt in enumerate(gt_intervals):
        target = torch.tensor([gt.start, gt.end], dtype=outputs.spans.dtype,
                              device=outputs.spans.device)
        total = total + regression_terms(outputs.spans[j + 1], target)
        mask = ((positions >= gt.start) & (positions <= gt.end))
        layer_losses = []
        for attn in state.cross_attention:
            mass = (attn[j + 1] * mask.to(attn.dtype)).sum().clamp(min=ATTENTION_MASS_FLOOR)
            layer_losses.append(-torch.log(mass))
        total = total + torch.stack(layer_losses).mean()
    return total


def compose_weakly_supervised(
    aug: BranchOutputs,
    inf: BranchOutputs,
    labels: StepLabels,
    weights: LossWeights,
    concept_logits: Tensor,
) -> dict[str, Tensor]:
    """Weighted weak-supervision total and its component breakdown.

    The ordering hinge sums an inference-branch term with margin 1/(2N) and
    an augmentation-branch term with the softer margin 1/(4N). Concept BCE is
    computed once: both branches share the query encoder and see the same
    text, so their concept predictions coincide.
    """
    n_sent = inf.num_sentences
    pseudo = labels.pseudo_interval
    s_att = attention_sum(aug.state, pseudo.start, pseudo.end, row=0).detach()
    screg = self_consistent_regression(
        aug.spans[0], pseudo, float(s_att), weights.beta)
    oga = (order_guided_attention(inf.state, 1.0 / (2 * n_sent))
           + order_guided_attention(aug.state, 1.0 / (4 * n_sent)))
    csc = concept_loss(concept_logits, labels.paragraph_concepts, labels.sentence_concepts)
    cb = cross_branch(aug.state.query_feats[-1], inf.state.query_feats[-1])
    ar = anchor_ranking(inf.state, 1.0 / (2 * n_sent))
    mask = ((aug.state.memory_positions >= pseudo.start)
            & (aug.state.memory_positions <= pseudo.end))
    pa = pseudo_attention(aug.state, mask)
    total = (weights.screg * screg + weights.oga * oga + weights.csc * csc
             + weights.cb * cb + weights.ar * ar + weights.pa * pa)
    return {
        "screg": screg, "oga": oga, "csc": csc,
        "cb": cb, "ar": ar, "pa": pa,
        "s_att": s_att, "total": total,
    }
