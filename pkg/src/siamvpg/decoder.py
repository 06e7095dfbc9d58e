"""Query decoder with dynamically refined anchor boxes.

Each query carries a (center, width) anchor in logit space. The first layer
runs from zero anchors and maps its output features to seed anchors; every
later layer embeds the current anchors sinusoidally, mixes them into the
self-attention as a position term, concatenates them to the cross-attention
queries, and predicts an additive anchor offset from its updated features.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor, nn

from .attention import MLP, FeedForward, scaled_attention
from .encoders import EncodedMemory
from .intervals import boxes_to_spans, embed_boxes, sinusoidal_embedding


@dataclass
class DecoderState:
    """Per-layer decoder trace: output features, anchors after the layer's
    update, and head-averaged cross-attention rows."""

    query_feats: list[Tensor]      # each (N+1, D), final-normed
    anchors: list[Tensor]          # each (N+1, 2), logit space
    cross_attention: list[Tensor]  # each (N+1, T), rows sum to 1
    memory_positions: Tensor       # (T,) normalized clip centers

    @property
    def num_layers(self) -> int:
        return len(self.query_feats)

    @property
    def memory_length(self) -> int:
        return self.memory_positions.shape[0]


class DecoderLayer(nn.Module):
    def __init__(self, dim: int, heads: int, ffn_dim: int, dropout: float):
        super().__init__()
        self.heads = heads
        # anchor embedding -> position features for self-attention
        self.anchor_proj = MLP(dim, dim, dim)
        # self-attention: content and position projections are summed
        self.sa_q_content = nn.Linear(dim, dim)
        self.sa_q_pos = nn.Linear(dim, dim)
        self.sa_k_content = nn.Linear(dim, dim)
        self.sa_k_pos = nn.Linear(dim, dim)
        self.sa_v = nn.Linear(dim, dim)
        self.sa_out = nn.Linear(dim, dim)
        # cross-attention: content and position projections are concatenated
        # for queries/keys; values add the projected memory position encoding
        self.ca_q_content = nn.Linear(dim, dim)
        self.ca_q_pos = nn.Linear(dim, dim)
        self.ca_k_content = nn.Linear(dim, dim)
        self.ca_k_pos = nn.Linear(dim, dim)
        self.ca_v_content = nn.Linear(dim, dim)
        self.ca_v_pos = nn.Linear(dim, dim)
        self.ca_out = nn.Linear(dim, dim)
        self.ffn = FeedForward(dim, ffn_dim, dropout)
        self.norm_sa = nn.LayerNorm(dim)
        self.norm_ca = nn.LayerNorm(dim)
        self.norm_ffn = nn.LayerNorm(dim)
        self.dropout = nn.Dropout(dropout)

    def forward(self, query: Tensor, anchor_embed: Tensor, memory: Tensor,
                memory_pe: Tensor,
                cross_weights_override: Tensor | None = None) -> tuple[Tensor, Tensor]:
        """query: (N+1, D); anchor_embed: (N+1, D) sinusoidal box features;
        memory: (T, D); memory_pe: (T, D). Returns (updated query, head-
        averaged cross-attention (N+1, T))."""
        h_anchor = self.anchor_proj(anchor_embed)
        h = self.norm_sa(query)
        sa, _ = scaled_attention(
            self.sa_q_content(h) + self.sa_q_pos(h_anchor),
            self.sa_k_content(h) + self.sa_k_pos(h_anchor),
            self.sa_v(h),
            self.heads,
        )
        query = query + self.dropout(self.sa_out(sa))

        h = self.norm_ca(query)
        ca, attn = scaled_attention(
            torch.cat([self.ca_q_content(h), self.ca_q_pos(anchor_embed)], dim=-1),
            torch.cat([self.ca_k_content(memory), self.ca_k_pos(memory_pe)], dim=-1),
            self.ca_v_content(memory) + self.ca_v_pos(memory_pe),
            self.heads,
            weights_override=cross_weights_override,
        )
        query = query + self.dropout(self.ca_out(ca))
        query = query + self.dropout(self.ffn(self.norm_ffn(query)))
        return query, attn.mean(dim=0)


class DynamicAnchorDecoder(nn.Module):
    def __init__(self, dim: int, heads: int, layers: int, ffn_dim: int, dropout: float):
        super().__init__()
        if layers < 1:
            raise ValueError("decoder needs at least one layer")
        self.dim = dim
        self.layers = nn.ModuleList(
            DecoderLayer(dim, heads, ffn_dim, dropout) for _ in range(layers)
        )
        self.seed_head = MLP(dim, dim, 2, zero_init_last=True)
        self.delta_heads = nn.ModuleList(
            MLP(dim, dim, 2, zero_init_last=True) for _ in range(layers - 1)
        )
        # one refinement head serves the paragraph row and all sentence rows
        self.boundary_head = MLP(dim, dim, 2, zero_init_last=True)
        self.norm = nn.LayerNorm(dim)

    def forward(self, memory: EncodedMemory, query: Tensor,
                cross_weights_override: Tensor | None = None) -> DecoderState:
        anchors = torch.zeros(query.shape[0], 2, dtype=query.dtype, device=query.device)
        memory_pe = sinusoidal_embedding(memory.positions, self.dim)
        feats, anchor_trace, attn_trace = [], [], []
        x = query
        for i, layer in enumerate(self.layers):
            anchor_embed = embed_boxes(anchors, self.dim)
            x, attn = layer(x, anchor_embed, memory.values, memory_pe,
                            cross_weights_override)
            normed = self.norm(x)
            if i == 0:
                anchors = self.seed_head(normed)
            else:
                anchors = anchors + self.delta_heads[i - 1](normed)
            feats.append(normed)
            anchor_trace.append(anchors)
            attn_trace.append(attn)
        return DecoderState(
            query_feats=feats,
            anchors=anchor_trace,
            cross_attention=attn_trace,
            memory_positions=memory.positions,
        )

    def predict_spans(self, state: DecoderState) -> Tensor:
        """Final (N+1, 2) spans: refinement offsets added to the last anchors,
        squashed into valid intervals. Row 0 is the paragraph span."""
        boxes = state.anchors[-1] + self.boundary_head(state.query_feats[-1])
        return boxes_to_spans(boxes)


def attention_sum(state: DecoderState, start: float, end: float, row: int) -> Tensor:
    """Last-layer attention mass of one query row over clips whose centers
    fall inside [start, end]."""
    attn = state.cross_attention[-1][row]
    mask = (state.memory_positions >= start) & (state.memory_positions <= end)
    return (attn * mask.to(attn.dtype)).sum()


def attention_centroid(state: DecoderState, row: int, layer: int = -1) -> Tensor:
    """Expected 1-based clip index under a query row's cross-attention."""
    attn = state.cross_attention[layer][row]
    idx = torch.arange(1, attn.shape[0] + 1, dtype=attn.dtype, device=attn.device)
    return (idx * attn).sum()
