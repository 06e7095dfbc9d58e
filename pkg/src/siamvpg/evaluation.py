"""Recall@IoU and mean-IoU evaluation, plus the random baseline used to
calibrate the synthetic-recovery experiments.

Metrics average over all sentences in the split (a global mean, not
per-video macro-averaging), and recall at threshold m is the fraction of
sentences whose predicted span reaches IoU >= m against ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import ParagraphSample
from .intervals import Interval, iou
from .model import GroundingPrediction


class EvaluationError(Exception):
    pass


@dataclass(frozen=True)
class SampleRecord:
    video_id: str
    ious: tuple[float, ...]


@dataclass(frozen=True)
class EvalReport:
    recalls: dict[float, float]
    miou: float
    per_sample: tuple[SampleRecord, ...]

    def to_dict(self) -> dict:
        return {
            "recalls": {f"{m:g}": r for m, r in sorted(self.recalls.items())},
            "miou": self.miou,
            "per_sample": [
                {"video_id": rec.video_id, "ious": list(rec.ious)}
                for rec in self.per_sample
            ],
        }


def evaluate(
    predictions: dict[str, GroundingPrediction],
    samples: list[ParagraphSample],
    thresholds: tuple[float, ...] = (0.3, 0.5, 0.7),
) -> EvalReport:
    missing = [s.video_id for s in samples if s.video_id not in predictions]
    if missing:
        raise EvaluationError(f"missing predictions for: {', '.join(sorted(missing))}")
    records = []
    all_ious = []
    for sample in sorted(samples, key=lambda s: s.video_id):
        if sample.gt_intervals is None:
            raise EvaluationError(f"sample {sample.video_id!r} has no ground-truth spans")
        pred = predictions[sample.video_id]
        if len(pred.sentences) != sample.num_sentences:
            raise EvaluationError(
                f"sample {sample.video_id!r}: {len(pred.sentences)} predictions for "
                f"{sample.num_sentences} sentences")
        ious = tuple(
            iou(p, gt) for p, gt in zip(pred.sentences, sample.gt_intervals)
        )
        records.append(SampleRecord(sample.video_id, ious))
        all_ious.extend(ious)
    arr = np.asarray(all_ious)
    recalls = {m: float((arr >= m).mean()) for m in thresholds}
    return EvalReport(recalls=recalls, miou=float(arr.mean()), per_sample=tuple(records))


def random_baseline(
    samples: list[ParagraphSample], seed: int
) -> dict[str, GroundingPrediction]:
    """Per sample, N ordered intervals built by sorting 2N uniform draws and
    pairing them consecutively."""
    rng = np.random.default_rng(seed)
    predictions = {}
    for sample in samples:
        n = sample.num_sentences
        points = np.sort(rng.uniform(0.0, 1.0, size=2 * n))
        sentences = tuple(
            Interval(float(points[2 * j]), float(points[2 * j + 1])) for j in range(n)
        )
        predictions[sample.video_id] = GroundingPrediction(
            paragraph=Interval(float(points[0]), float(points[-1])),
            sentences=sentences,
        )
    return predictions


def baseline_miou(
    samples: list[ParagraphSample], seeds: range | list[int],
    thresholds: tuple[float, ...] = (0.3, 0.5, 0.7),
) -> tuple[float, float]:
    """Mean and standard deviation of the random baseline's mIoU over seeds."""
    scores = [
        evaluate(random_baseline(samples, seed), samples, thresholds).miou
        for seed in seeds
    ]
    return float(np.mean(scores)), float(np.std(scores))
