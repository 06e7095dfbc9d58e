"""Data model and on-disk formats.

Feature files are little-endian binary: a 16-byte header (magic ``SGFT``,
u32 clip count L, u32 channel count D_v, u32 reserved) followed by L*D_v
float32 values, row-major. Annotations are UTF-8 JSON; spans are optional
per video to represent weak supervision. All timestamps are normalized to
[0, 1] internally; raw seconds appear only at the file boundary.
"""

from __future__ import annotations

import json
import struct
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .intervals import Interval

FEATURE_MAGIC = b"SGFT"


class DatasetError(Exception):
    """Raised on malformed annotation or feature files."""


@dataclass(frozen=True)
class FeatureSequence:
    """L x D_v float32 clip features; clip i covers [i/L, (i+1)/L)."""

    values: np.ndarray

    def __post_init__(self):
        v = self.values
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise DatasetError(f"feature matrix must be L x D with L,D >= 1, got {v.shape}")
        if not np.isfinite(v).all():
            raise DatasetError("feature matrix contains non-finite values")

    @property
    def num_clips(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class Sentence:
    tokens: tuple[int, ...]
    concept_ids: frozenset[int] = frozenset()

    def __post_init__(self):
        if len(self.tokens) == 0:
            raise DatasetError("sentence has no tokens")


@dataclass(frozen=True)
class ParagraphSample:
    video_id: str
    features: FeatureSequence
    sentences: tuple[Sentence, ...]
    gt_intervals: tuple[Interval, ...] | None = None
    paragraph_concept_ids: frozenset[int] = frozenset()

    def __post_init__(self):
        if len(self.sentences) < 1:
            raise DatasetError(f"sample {self.video_id!r} has no sentences")
        if self.gt_intervals is not None and len(self.gt_intervals) != len(self.sentences):
            raise DatasetError(
                f"sample {self.video_id!r}: {len(self.gt_intervals)} intervals for "
                f"{len(self.sentences)} sentences"
            )

    @property
    def num_sentences(self) -> int:
        return len(self.sentences)


@dataclass(frozen=True)
class ConceptDictionary:
    """Ordered concept token ids with their raw word vectors (K x D_w)."""

    concepts: tuple[int, ...]
    embeddings: np.ndarray

    def __post_init__(self):
        if self.embeddings.shape[0] != len(self.concepts):
            raise DatasetError("concept embedding row count does not match concept list")
        if not np.isfinite(self.embeddings).all():
            raise DatasetError("concept embeddings contain non-finite values")

    @property
    def size(self) -> int:
        return len(self.concepts)


@dataclass
class EmbeddingTable:
    """Frozen token-id -> vector lookup; unknown tokens map to the zero vector."""

    vectors: dict[int, np.ndarray]
    dim: int

    def lookup(self, token: int) -> np.ndarray:
        vec = self.vectors.get(token)
        if vec is None:
            return np.zeros(self.dim, dtype=np.float32)
        return vec

    def as_matrix(self, vocab_size: int) -> np.ndarray:
        """Dense (vocab_size, dim) matrix with zero rows for missing ids."""
        mat = np.zeros((vocab_size, self.dim), dtype=np.float32)
        for tok, vec in self.vectors.items():
            if 0 <= tok < vocab_size:
                mat[tok] = vec
        return mat

    @property
    def max_token(self) -> int:
        return max(self.vectors) if self.vectors else -1


# ---------------------------------------------------------------------------
# Feature file io
# ---------------------------------------------------------------------------

def write_features(path: Path | str, features: FeatureSequence) -> None:
    values = np.ascontiguousarray(features.values, dtype="<f4")
    n_clips, dim = values.shape
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<III", n_clips, dim, 0))
        fh.write(values.tobytes())


def read_features(path: Path | str) -> FeatureSequence:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 16 or raw[:4] != FEATURE_MAGIC:
        raise DatasetError(f"{path}: not a feature file (bad magic)")
    n_clips, dim, _reserved = struct.unpack("<III", raw[4:16])
    expected = 16 + 4 * n_clips * dim
    if len(raw) != expected:
        raise DatasetError(f"{path}: expected {expected} bytes, found {len(raw)}")
    values = np.frombuffer(raw[16:], dtype="<f4").reshape(n_clips, dim).copy()
    values.flags.writeable = False
    return FeatureSequence(values)


# ---------------------------------------------------------------------------
# Annotation io
# ---------------------------------------------------------------------------

def write_annotations(path: Path | str, samples: list[dict]) -> None:
    """Write the annotation JSON; samples are raw dicts in file schema."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"videos": samples}, fh, indent=1, sort_keys=True)


def load_dataset(
    features_dir: Path | str,
    annotations: Path | str,
    warn_counter: Counter | None = None,
) -> list[ParagraphSample]:
    """Load annotated samples, normalizing spans by video duration.

    Raw timestamps outside [0, duration] are clamped (counted in
    ``warn_counter["clamped_spans"]`` when a counter is passed). Spans must be
    present for all sentences of a video or none of them.
    """
    features_dir = Path(features_dir)
    annotations = Path(annotations)
    try:
        doc = json.loads(annotations.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{annotations}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict) or "videos" not in doc or not isinstance(doc["videos"], list):
        raise DatasetError(f"{annotations}: missing top-level 'videos' list")

    samples = []
    for entry in doc["videos"]:
        vid = entry.get("id")
        if not isinstance(vid, str) or not vid:
            raise DatasetError(f"{annotations}: video entry without a string 'id'")
        duration = entry.get("duration_s")
        if not isinstance(duration, (int, float)) or duration <= 0:
            raise DatasetError(f"sample {vid!r}: 'duration_s' must be a positive number")
        sent_entries = entry.get("sentences")
        if not isinstance(sent_entries, list) or len(sent_entries) == 0:
            raise DatasetError(f"sample {vid!r}: empty or missing sentence list")

        sentences = []
        spans = []
        for k, s in enumerate(sent_entries):
            tokens = s.get("text_tokens")
            if (not isinstance(tokens, list) or len(tokens) == 0
                    or not all(isinstance(t, int) for t in tokens)):
                raise DatasetError(f"sample {vid!r}, sentence {k}: bad 'text_tokens'")
            sentences.append(Sentence(tuple(tokens)))
            span = s.get("span_s")
            if span is not None:
                if (not isinstance(span, list) or len(span) != 2
                        or not all(isinstance(x, (int, float)) for x in span)):
                    raise DatasetError(f"sample {vid!r}, sentence {k}: bad 'span_s'")
                spans.append((float(span[0]), float(span[1])))
            else:
                spans.append(None)

        have = [sp is not None for sp in spans]
        if any(have) and not all(have):
            raise DatasetError(f"sample {vid!r}: spans must be given for all sentences or none")

        gt = None
        if all(have):
            starts = [sp[0] for sp in spans]
            if any(starts[i] > starts[i + 1] for i in range(len(starts) - 1)):
                raise DatasetError(f"sample {vid!r}: sentence spans are not in temporal order")
            gt = []
            for sp in spans:
                lo, hi = sp[0] / duration, sp[1] / duration
                clamped_lo = min(max(lo, 0.0), 1.0)
                clamped_hi = min(max(hi, 0.0), 1.0)
                if (clamped_lo, clamped_hi) != (lo, hi) and warn_counter is not None:
                    warn_counter["clamped_spans"] += 1
                if clamped_lo > clamped_hi:
                    raise DatasetError(f"sample {vid!r}: span {sp} inverts after normalization")
                gt.append(Interval(clamped_lo, clamped_hi))
            gt = tuple(gt)

        feature_path = features_dir / f"{vid}.sgft"
        if not feature_path.exists():
            raise DatasetError(f"sample {vid!r}: feature file {feature_path} not found")
        samples.append(ParagraphSample(
            video_id=vid,
            features=read_features(feature_path),
            sentences=tuple(sentences),
            gt_intervals=gt,
        ))
    return samples


def sample_to_annotation(sample: ParagraphSample, duration_s: float) -> dict:
    """Inverse of the loader for one sample (used by the synthetic writer)."""
    sentences = []
    for k, sent in enumerate(sample.sentences):
        entry = {"text_tokens": list(sent.tokens)}
        if sample.gt_intervals is not None:
            iv = sample.gt_intervals[k]
            entry["span_s"] = [iv.start * duration_s, iv.end * duration_s]
        sentences.append(entry)
    return {"id": sample.video_id, "duration_s": duration_s, "sentences": sentences}


# ---------------------------------------------------------------------------
# Embedding table io
# ---------------------------------------------------------------------------

def write_embedding_table(path: Path | str, table: EmbeddingTable) -> None:
    doc = {
        "dim": table.dim,
        "vectors": {str(tok): [float(x) for x in vec] for tok, vec in sorted(table.vectors.items())},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)


def read_embedding_table(path: Path | str) -> EmbeddingTable:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    dim = int(doc["dim"])
    vectors = {
        int(tok): np.asarray(vec, dtype=np.float32)
        for tok, vec in doc["vectors"].items()
    }
    for tok, vec in vectors.items():
        if vec.shape != (dim,):
            raise DatasetError(f"embedding for token {tok} has shape {vec.shape}, want ({dim},)")
    return EmbeddingTable(vectors=vectors, dim=dim)


# ---------------------------------------------------------------------------
# Concept dictionary
# ---------------------------------------------------------------------------

def build_concept_dictionary(
    samples: list[ParagraphSample],
    embeddings: EmbeddingTable,
    k: int,
    explicit_list: list[int] | None = None,
) -> ConceptDictionary:
    """Pick the K concept tokens, either verbatim from an explicit list or as
    the K most frequent token ids in the training sentences (occurrence
    counts; ties broken by smaller token id)."""
    if k < 1:
        raise ValueError(f"concept count must be >= 1, got {k}")
    if explicit_list is not None:
        if len(explicit_list) != k:
            raise ValueError(f"explicit concept list has {len(explicit_list)} entries, want {k}")
        chosen = list(explicit_list)
    else:
        counts = Counter()
        for sample in samples:
            for sent in sample.sentences:
                counts.update(sent.tokens)
        if len(counts) < k:
            raise ValueError(f"requested {k} concepts but only {len(counts)} distinct tokens observed")
        chosen = [tok for tok, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:k]]
    mat = np.stack([embeddings.lookup(tok) for tok in chosen])
    return ConceptDictionary(concepts=tuple(chosen), embeddings=mat)


def write_concepts(path: Path | str, dictionary: ConceptDictionary) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"concepts": list(dictionary.concepts)}, fh)


def read_concept_list(path: Path | str) -> list[int]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return [int(t) for t in doc["concepts"]]


def concept_labels(
    sample: ParagraphSample, dictionary: ConceptDictionary
) -> tuple[np.ndarray, np.ndarray]:
    """Multi-hot concept labels: (paragraph (K,), sentences (N, K)).

    Sentence entry k is 1 iff concept k's token id occurs in that sentence;
    the paragraph vector is the elementwise OR over sentences.
    """
    k = dictionary.size
    index = {tok: i for i, tok in enumerate(dictionary.concepts)}
    sent = np.zeros((sample.num_sentences, k), dtype=np.float32)
    for j, sentence in enumerate(sample.sentences):
        for tok in sentence.tokens:
            pos = index.get(tok)
            if pos is not None:
                sent[j, pos] = 1.0
    return sent.max(axis=0), sent


def with_concept_ids(sample: ParagraphSample, dictionary: ConceptDictionary) -> ParagraphSample:
    """Copy of the sample with concept-id fields filled from the dictionary."""
    index = {tok: i for i, tok in enumerate(dictionary.concepts)}
    sentences = tuple(
        Sentence(s.tokens, frozenset(index[t] for t in s.tokens if t in index))
        for s in sample.sentences
    )
    paragraph = frozenset().union(*(s.concept_ids for s in sentences))
    return ParagraphSample(
        video_id=sample.video_id,
        features=sample.features,
        sentences=sentences,
        gt_intervals=sample.gt_intervals,
        paragraph_concept_ids=paragraph,
    )
