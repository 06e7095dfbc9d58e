"""Synthetic corpus with planted video-text alignment.

Each sample gets N ordered, non-overlapping intervals. Sentence i is a bag
of tokens drawn from a latent topic; clips inside its interval carry a fixed
linear map of the sentence's mean token embedding plus Gaussian noise, clips
outside are pure noise. The alignment is therefore recoverable from raw
features, which is what the training harness is verified against.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ConfigError
from .data import (
    ConceptDictionary,
    EmbeddingTable,
    FeatureSequence,
    ParagraphSample,
    Sentence,
    build_concept_dictionary,
    sample_to_annotation,
    write_annotations,
    write_concepts,
    write_embedding_table,
    write_features,
)
from .intervals import Interval


class GenerationError(Exception):
    pass


REQUIRED_KEYS = (
    "num_train", "num_val", "num_test", "n_sentences_range",
    "clip_len_range", "feature_dim", "vocab_size", "noise_sigma", "seed",
)


@dataclass(frozen=True)
class SynthConfig:
    num_train: int
    num_val: int
    num_test: int
    n_sentences_range: tuple[int, int]
    clip_len_range: tuple[int, int]
    feature_dim: int
    vocab_size: int
    noise_sigma: float
    seed: int
    embedding_dim: int = 50
    span_len_range: tuple[float, float] = (0.12, 0.25)
    num_topics: int = 20
    tokens_per_topic: int = 8
    num_concepts: int = 100
    duration_s: float = 120.0
    duplicate_topic_prob: float = 0.5

    def __post_init__(self):
        lo, hi = self.n_sentences_range
        if not (1 <= lo <= hi):
            raise ConfigError("n_sentences_range must satisfy 1 <= lo <= hi")
        if hi > self.num_topics:
            raise ConfigError("n_sentences_range upper bound exceeds num_topics")
        clo, chi = self.clip_len_range
        if not (1 <= clo <= chi):
            raise ConfigError("clip_len_range must satisfy 1 <= lo <= hi")
        slo, shi = self.span_len_range
        if not (0.0 < slo <= shi < 1.0):
            raise ConfigError("span_len_range must satisfy 0 < lo <= hi < 1")
        if self.num_topics * self.tokens_per_topic > self.vocab_size:
            raise ConfigError("vocab too small for disjoint topic token sets")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        if not (0.0 <= self.duplicate_topic_prob <= 1.0):
            raise ConfigError("duplicate_topic_prob must be in [0, 1]")

    @classmethod
    def from_dict(cls, raw: dict) -> "SynthConfig":
        for key in REQUIRED_KEYS:
            if key not in raw:
                raise ConfigError(f"synthetic config missing required key {key!r}")
        known = {f.name for f in cls.__dataclass_fields__.values()}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown synthetic config keys: {sorted(unknown)}")
        kwargs = dict(raw)
        for key in ("n_sentences_range", "clip_len_range", "span_len_range"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


DEFAULT_SYNTH = SynthConfig(
    num_train=200, num_val=50, num_test=50,
    n_sentences_range=(2, 4), clip_len_range=(48, 96),
    feature_dim=32, vocab_size=200, noise_sigma=0.4, seed=0,
)


@dataclass
class SyntheticDataset:
    train: list[ParagraphSample]
    val: list[ParagraphSample]
    test: list[ParagraphSample]
    embeddings: EmbeddingTable
    concepts: ConceptDictionary
    config: SynthConfig


def _plant_intervals(n: int, cfg: SynthConfig, rng: np.random.Generator) -> list[Interval]:
    lengths = rng.uniform(*cfg.span_len_range, size=n)
    total = lengths.sum()
    if total > 1.0:
        raise GenerationError(
            f"cannot pack {n} spans totalling {total:.3f} into a unit timeline"
        )
    gaps = rng.uniform(0.0, 1.0, size=n + 1)
    gaps = gaps / gaps.sum() * (1.0 - total)
    intervals = []
    cursor = 0.0
    for i in range(n):
        cursor += gaps[i]
        intervals.append(Interval(cursor, min(cursor + lengths[i], 1.0)))
        cursor += lengths[i]
    return intervals


def _make_sample(
    video_id: str,
    cfg: SynthConfig,
    topics: np.ndarray,
    embed_matrix: np.ndarray,
    feature_map: np.ndarray,
    rng: np.random.Generator,
) -> ParagraphSample:
    n = int(rng.integers(cfg.n_sentences_range[0], cfg.n_sentences_range[1] + 1))
    length = int(rng.integers(cfg.clip_len_range[0], cfg.clip_len_range[1] + 1))
    intervals = _plant_intervals(n, cfg, rng)
    topic_ids = rng.choice(cfg.num_topics, size=n, replace=False)
    # recurring events: sometimes an adjacent sentence pair repeats a topic,
    # so content alone cannot assign the pair's intervals; only order can
    if n >= 2 and rng.uniform() < cfg.duplicate_topic_prob:
        j = int(rng.integers(0, n - 1))
        topic_ids[j + 1] = topic_ids[j]

    sentences = []
    prototypes = []
    for tid in topic_ids:
        # one shuffled pass over the whole topic token set: the sentence's
        # mean embedding equals the topic mean exactly, so two sentences on
        # the same topic are indistinguishable by content
        tokens = rng.permutation(topics[tid])
        sentences.append(Sentence(tuple(int(t) for t in tokens)))
        prototypes.append(feature_map @ embed_matrix[tokens].mean(axis=0))

    values = rng.normal(0.0, 1.0, size=(length, cfg.feature_dim)).astype(np.float32)
    centers = (np.arange(length) + 0.5) / length
    for iv, proto in zip(intervals, prototypes):
        inside = (centers >= iv.start) & (centers <= iv.end)
        noise = rng.normal(0.0, cfg.noise_sigma, size=(int(inside.sum()), cfg.feature_dim))
        values[inside] = (proto[None, :] + noise).astype(np.float32)

    return ParagraphSample(
        video_id=video_id,
        features=FeatureSequence(values),
        sentences=tuple(sentences),
        gt_intervals=tuple(intervals),
    )


def generate_synthetic(config: SynthConfig, seed: int | None = None) -> SyntheticDataset:
    """Generate train/val/test splits plus embedding table and concept
    dictionary, deterministically from the seed."""
    seed = config.seed if seed is None else seed
    root = np.random.SeedSequence(seed)
    shared_rng, train_rng, val_rng, test_rng = (
        np.random.default_rng(s) for s in root.spawn(4)
    )

    embed_matrix = shared_rng.normal(0.0, 1.0, size=(config.vocab_size, config.embedding_dim))
    embed_matrix = embed_matrix.astype(np.float32)
    token_pool = shared_rng.permutation(config.vocab_size)
    topics = token_pool[: config.num_topics * config.tokens_per_topic].reshape(
        config.num_topics, config.tokens_per_topic
    )
    # scale the planted map so in-span features have roughly unit variance,
    # comparable with the N(0,1) background clips
    gain = np.sqrt(config.tokens_per_topic / config.embedding_dim)
    feature_map = shared_rng.normal(0.0, gain, size=(config.feature_dim, config.embedding_dim))

    def split(name: str, count: int, rng: np.random.Generator) -> list[ParagraphSample]:
        return [
            _make_sample(f"syn_{name}_{i:04d}", config, topics, embed_matrix, feature_map, rng)
            for i in range(count)
        ]

    train = split("train", config.num_train, train_rng)
    val = split("val", config.num_val, val_rng)
    test = split("test", config.num_test, test_rng)

    table = EmbeddingTable(
        vectors={tok: embed_matrix[tok] for tok in range(config.vocab_size)},
        dim=config.embedding_dim,
    )
    concepts = build_concept_dictionary(train, table, config.num_concepts)
    return SyntheticDataset(train, val, test, table, concepts, config)


def write_synthetic(dataset: SyntheticDataset, out_dir: Path | str) -> None:
    """Write the on-disk layout: per-split feature files + annotations, plus
    the shared embedding table and concept list."""
    out_dir = Path(out_dir)
    for name, samples in (("train", dataset.train), ("val", dataset.val), ("test", dataset.test)):
        split_dir = out_dir / name
        (split_dir / "features").mkdir(parents=True, exist_ok=True)
        entries = []
        for sample in samples:
            write_features(split_dir / "features" / f"{sample.video_id}.sgft", sample.features)
            entries.append(sample_to_annotation(sample, dataset.config.duration_s))
        write_annotations(split_dir / "annotations.json", entries)
    write_embedding_table(out_dir / "embeddings.json", dataset.embeddings)
    write_concepts(out_dir / "concepts.json", dataset.concepts)


def load_synth_config(path: Path | str) -> SynthConfig:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return SynthConfig.from_dict(raw)
