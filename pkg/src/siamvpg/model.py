"""The shared-parameter grounding model.

One instance drives both training branches: the pseudo-video branch and the
normal-video branch call exactly the same modules, so weight sharing holds by
construction. Inference keeps only the text pipeline, video encoder, decoder
and boundary head; composition and concept prediction never run.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import Tensor, nn

from .config import ModelConfig
from .data import ParagraphSample, Sentence
from .decoder import DecoderState, DynamicAnchorDecoder
from .encoders import EncodedMemory, QueryEncoder, SentenceEncoder, VideoEncoder
from .intervals import Interval


@dataclass(frozen=True)
class GroundingPrediction:
    paragraph: Interval
    sentences: tuple[Interval, ...]


class GroundingModel(nn.Module):
    def __init__(self, cfg: ModelConfig, feature_dim: int, embed_matrix: np.ndarray):
        super().__init__()
        self.cfg = cfg
        dim = cfg.hidden_dim
        embed_dim = embed_matrix.shape[1]
        self.register_buffer(
            "embed_matrix", torch.from_numpy(np.ascontiguousarray(embed_matrix, dtype=np.float32))
        )
        self.sentence_encoder = SentenceEncoder(embed_dim, cfg.gru_hidden, dim)
        self.query_encoder = QueryEncoder(dim, cfg.heads, cfg.encoder_layers,
                                          cfg.ffn_dim, cfg.dropout)
        self.video_encoder = VideoEncoder(feature_dim, dim, cfg.heads,
                                          cfg.encoder_layers, cfg.ffn_dim, cfg.dropout)
        self.decoder = DynamicAnchorDecoder(dim, cfg.heads, cfg.decoder_layers,
                                            cfg.ffn_dim, cfg.dropout)
        self.concept_proj = nn.Linear(embed_dim, dim)
        self.concept_eval_count = 0  # audited by the inference-pruning tests

    @property
    def dtype(self) -> torch.dtype:
        return self.embed_matrix.dtype

    def embed_tokens(self, sentence: Sentence) -> Tensor:
        """(len, D_w) word vectors; ids outside the table map to zeros."""
        ids = torch.as_tensor(sentence.tokens, dtype=torch.long,
                              device=self.embed_matrix.device)
        vocab = self.embed_matrix.shape[0]
        valid = ((ids >= 0) & (ids < vocab)).to(self.dtype)
        return self.embed_matrix[ids.clamp(0, vocab - 1)] * valid[:, None]

    def encode_sentences(self, sentences: tuple[Sentence, ...]) -> Tensor:
        return self.sentence_encoder([self.embed_tokens(s) for s in sentences])

    def encode_query(self, sentence_feats: Tensor) -> Tensor:
        return self.query_encoder(sentence_feats)

    def encode_video(self, features, positions: Tensor | None = None,
                     attn_override: Tensor | None = None) -> EncodedMemory:
        if not torch.is_tensor(features):
            # loaded feature arrays are read-only; torch wants writable memory
            features = torch.from_numpy(np.array(features, copy=True))
        features = features.to(self.dtype)
        return self.video_encoder(features, positions, attn_override)

    def decode(self, memory: EncodedMemory, query: Tensor,
               attn_override: Tensor | None = None) -> DecoderState:
        return self.decoder(memory, query, attn_override)

    def predict_spans(self, state: DecoderState) -> Tensor:
        return self.decoder.predict_spans(state)

    def concept_logits(self, query_feats: Tensor, concept_vectors: np.ndarray | Tensor) -> Tensor:
        """Dot products between projected dictionary vectors and the encoded
        query rows: (N+1, K) logits. Training-time only."""
        self.concept_eval_count += 1
        if not torch.is_tensor(concept_vectors):
            concept_vectors = torch.from_numpy(np.ascontiguousarray(concept_vectors))
        dict_feats = self.concept_proj(concept_vectors.to(self.dtype))  # (K, D)
        return query_feats @ dict_feats.T

    def infer(self, sample: ParagraphSample) -> GroundingPrediction:
        """Single inference-branch forward on the normal video."""
        was_training = self.training
        self.eval()
        try:
            with torch.no_grad():
                sent_feats = self.encode_sentences(sample.sentences)
                query = self.encode_query(sent_feats)
                memory = self.encode_video(sample.features.values)
                state = self.decode(memory, query)
                spans = self.predict_spans(state)
        finally:
            self.train(was_training)
        rows = [Interval(float(s), float(e)) for s, e in spans.tolist()]
        return GroundingPrediction(paragraph=rows[0], sentences=tuple(rows[1:]))


def spans_to_prediction(spans: Tensor) -> GroundingPrediction:
    rows = [Interval(float(s), float(e)) for s, e in spans.detach().tolist()]
    return GroundingPrediction(paragraph=rows[0], sentences=tuple(rows[1:]))
