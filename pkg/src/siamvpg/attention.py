"""Multi-head attention core operating on pre-projected q/k/v tensors.

Callers own the projection layers, which is what lets the decoder sum or
concatenate content and position projections before the attention itself.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import Tensor, nn


def scaled_attention(
    q: Tensor, k: Tensor, v: Tensor, num_heads: int,
    weights_override: Tensor | None = None,
) -> tuple[Tensor, Tensor]:
    """Attention over already-projected tensors.

    q: (Lq, Dq), k: (Lk, Dq), v: (Lk, Dv); Dq and Dv must both split into
    num_heads. ``weights_override`` (num_heads, Lq, Lk) bypasses the QK
    softmax, which the tests use to freeze attention patterns.

    Returns (output (Lq, Dv), attention weights (num_heads, Lq, Lk)).
    """
    lq, dq = q.shape
    lk, dv = v.shape
    head_q = dq // num_heads
    head_v = dv // num_heads
    if weights_override is None:
        qh = q.reshape(lq, num_heads, head_q).transpose(0, 1)  # (h, Lq, hq)
        kh = k.reshape(lk, num_heads, head_q).transpose(0, 1)
        logits = qh @ kh.transpose(1, 2) / math.sqrt(head_q)
        attn = F.softmax(logits, dim=-1)
    else:
        attn = weights_override
    vh = v.reshape(lk, num_heads, head_v).transpose(0, 1)  # (h, Lk, hv)
    out = attn @ vh  # (h, Lq, hv)
    out = out.transpose(0, 1).reshape(lq, dv)
    return out, attn


class SelfAttention(nn.Module):
    """Standard projected self-attention; queries/keys may see a different
    input than values (the video encoder feeds position-modulated features
    to q/k only)."""

    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        self.num_heads = num_heads
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.out_proj = nn.Linear(dim, dim)

    def forward(self, qk_input: Tensor, v_input: Tensor,
                weights_override: Tensor | None = None) -> tuple[Tensor, Tensor]:
        out, attn = scaled_attention(
            self.q_proj(qk_input), self.k_proj(qk_input), self.v_proj(v_input),
            self.num_heads, weights_override,
        )
        return self.out_proj(out), attn


class MLP(nn.Module):
    """Two-layer feed-forward head; optional zero final layer so iterative
    refinement starts from the identity."""

    def __init__(self, in_dim: int, hidden_dim: int, out_dim: int,
                 zero_init_last: bool = False):
        super().__init__()
        self.fc1 = nn.Linear(in_dim, hidden_dim)
        self.fc2 = nn.Linear(hidden_dim, out_dim)
        if zero_init_last:
            nn.init.zeros_(self.fc2.weight)
            nn.init.zeros_(self.fc2.bias)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(F.relu(self.fc1(x)))


class FeedForward(nn.Module):
    def __init__(self, dim: int, hidden_dim: int, dropout: float):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden_dim)
        self.fc2 = nn.Linear(hidden_dim, dim)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(self.dropout(F.relu(self.fc1(x))))
