"""Query-side and video-side encoders.

The sentence encoder is a bidirectional GRU over frozen word vectors whose
directional final states are concatenated and projected. The query encoder
prepends a learnable paragraph token and runs pre-norm self-attention blocks.
The video encoder gates fixed sinusoidal position embeddings with a learned
function of the clip features and injects them into attention queries/keys
only, leaving the value path position-free.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .attention import FeedForward, SelfAttention
from .intervals import sinusoidal_embedding


@dataclass
class EncodedMemory:
    """Encoded clip features with the normalized clip-center positions they
    were encoded at."""

    values: Tensor     # (T, D)
    positions: Tensor  # (T,)

    @property
    def length(self) -> int:
        return self.values.shape[0]


class SentenceEncoder(nn.Module):
    def __init__(self, embed_dim: int, hidden_dim: int, out_dim: int):
        super().__init__()
        self.gru = nn.GRU(embed_dim, hidden_dim, bidirectional=True)
        self.proj = nn.Linear(2 * hidden_dim, out_dim)

    def forward(self, token_vectors: list[Tensor]) -> Tensor:
        """token_vectors: per sentence, a (len_i, D_w) tensor of word vectors.
        Returns (N, D)."""
        rows = []
        for vecs in token_vectors:
            _, h_final = self.gru(vecs.unsqueeze(1))  # h_final: (2, 1, H)
            rows.append(torch.cat([h_final[0, 0], h_final[1, 0]], dim=-1))
        return self.proj(torch.stack(rows))


class EncoderBlock(nn.Module):
    """Pre-norm self-attention + feed-forward residual block."""

    def __init__(self, dim: int, heads: int, ffn_dim: int, dropout: float):
        super().__init__()
        self.attn = SelfAttention(dim, heads)
        self.ffn = FeedForward(dim, ffn_dim, dropout)
        self.norm1 = nn.LayerNorm(dim)
        self.norm2 = nn.LayerNorm(dim)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: Tensor, pe: Tensor | None = None,
                weights_override: Tensor | None = None) -> Tensor:
        h = self.norm1(x)
        qk = h if pe is None else h + pe
        attn_out, _ = self.attn(qk, h, weights_override)
        x = x + self.dropout(attn_out)
        x = x + self.dropout(self.ffn(self.norm2(x)))
        return x


class QueryEncoder(nn.Module):
    """Contextualizes [paragraph token; sentence features] with fixed
    index-based positional encodings."""

    def __init__(self, dim: int, heads: int, layers: int, ffn_dim: int, dropout: float):
        super().__init__()
        self.paragraph_token = nn.Parameter(torch.randn(dim) * 0.02)
        self.input_norm = nn.LayerNorm(dim)
        self.blocks = nn.ModuleList(
            EncoderBlock(dim, heads, ffn_dim, dropout) for _ in range(layers)
        )
        self.final_norm = nn.LayerNorm(dim)
        self.dim = dim

    def forward(self, sentence_feats: Tensor) -> Tensor:
        """sentence_feats: (N, D) -> (N+1, D) with row 0 the paragraph row."""
        x = torch.cat([self.paragraph_token.unsqueeze(0), sentence_feats], dim=0)
        n_rows = x.shape[0]
        x = self.input_norm(x)
        positions = torch.arange(n_rows, dtype=x.dtype, device=x.device) / n_rows
        x = x + sinusoidal_embedding(positions, self.dim)
        for block in self.blocks:
            x = block(x)
        return self.final_norm(x)


class ModulatedPositionalEncoding(nn.Module):
    """Eq-style gate: a two-layer map of the clip features squashed through a
    sigmoid, multiplied elementwise onto the sinusoidal position embedding."""

    def __init__(self, dim: int, hidden_dim: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden_dim)
        self.fc2 = nn.Linear(hidden_dim, dim)

    def gate(self, x: Tensor) -> Tensor:
        return torch.sigmoid(self.fc2(F.gelu(self.fc1(x))))

    def forward(self, x: Tensor, pe: Tensor) -> Tensor:
        return self.gate(x) * pe


class VideoEncoderBlock(nn.Module):
    def __init__(self, dim: int, heads: int, ffn_dim: int, dropout: float):
        super().__init__()
        self.mpe = ModulatedPositionalEncoding(dim, ffn_dim)
        self.block = EncoderBlock(dim, heads, ffn_dim, dropout)

    def forward(self, x: Tensor, pe: Tensor,
                weights_override: Tensor | None = None) -> Tensor:
        return self.block(x, pe=self.mpe(x, pe), weights_override=weights_override)


class VideoEncoder(nn.Module):
    def __init__(self, feature_dim: int, dim: int, heads: int, layers: int,
                 ffn_dim: int, dropout: float):
        super().__init__()
        self.input_proj = nn.Linear(feature_dim, dim)
        self.blocks = nn.ModuleList(
            VideoEncoderBlock(dim, heads, ffn_dim, dropout) for _ in range(layers)
        )
        self.final_norm = nn.LayerNorm(dim)
        self.dim = dim

    def forward(self, features: Tensor, positions: Tensor | None = None,
                weights_override: Tensor | None = None) -> EncodedMemory:
        """features: (L, D_v) raw clip features. positions default to the
        normalized clip centers (t + 0.5) / L."""
        n_clips = features.shape[0]
        if positions is None:
            positions = (torch.arange(n_clips, dtype=features.dtype,
                                      device=features.device) + 0.5) / n_clips
        x = self.input_proj(features)
        pe = sinusoidal_embedding(positions, self.dim)
        for block in self.blocks:
            x = block(x, pe, weights_override)
        return EncodedMemory(values=self.final_norm(x), positions=positions)
