"""Two-branch training orchestration, optimization, and checkpointing.

Every step runs both forwards through the single shared model: a pseudo-video
pass supplying paragraph-level boundary supervision and a normal-video pass
learning order-guided alignment. Checkpoints use a purpose-built binary
container (JSON header + raw tensor payload) so identical state always
serializes to identical bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .compose import PseudoComposer
from .config import TrainConfig, config_hash, train_config_from_dict
from .data import ConceptDictionary, EmbeddingTable, ParagraphSample, concept_labels
from .losses import (
    BranchOutputs,
    StepLabels,
    compose_weakly_supervised,
    fully_supervised,
)
from .model import GroundingModel, GroundingPrediction

CHECKPOINT_MAGIC = b"SVPGCKPT"
CHECKPOINT_VERSION = 1

_DTYPES = {
    "float32": torch.float32,
    "float64": torch.float64,
    "int64": torch.int64,
    "int32": torch.int32,
    "uint8": torch.uint8,
    "bool": torch.bool,
}


class TrainingAbort(RuntimeError):
    """Raised when a step produces a non-finite loss."""

    def __init__(self, video_id: str, breakdown: dict):
        self.video_id = video_id
        self.breakdown = breakdown
        super().__init__(f"non-finite loss on sample {video_id!r}: {breakdown}")


class CheckpointError(Exception):
    pass


def build_model(config: TrainConfig, feature_dim: int, table: EmbeddingTable) -> GroundingModel:
    vocab = table.max_token + 1
    return GroundingModel(config.model, feature_dim, table.as_matrix(vocab))


class SiameseTrainer:
    def __init__(
        self,
        model: GroundingModel,
        train_samples: list[ParagraphSample],
        config: TrainConfig,
        concepts: ConceptDictionary,
    ):
        if len(train_samples) < 2:
            raise ValueError("training needs at least two videos to draw backgrounds from")
        self.model = model
        self.samples = list(train_samples)
        self.config = config
        self.concepts = concepts
        self.composer = PseudoComposer(config.compose_config())
        self.optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
        self.rng = np.random.default_rng(config.seed)
        self.epoch = 0
        self.step = 0
        self.selected_epoch = None  # set by run_training under best-val selection
        self.selected_val_miou = None

        self.labeled_indices = self._pick_labeled_indices()
        if config.mode in ("ss", "fs"):
            for idx in sorted(self.labeled_indices):
                if self.samples[idx].gt_intervals is None:
                    raise ValueError(
                        f"mode {config.mode!r} needs spans but sample "
                        f"{self.samples[idx].video_id!r} has none"
                    )

        self._concept_vectors = torch.from_numpy(
            np.ascontiguousarray(concepts.embeddings, dtype=np.float32))
        self._labels_cache = {}
        for sample in self.samples:
            para, sent = concept_labels(sample, concepts)
            self._labels_cache[sample.video_id] = (
                torch.from_numpy(para), torch.from_numpy(sent))

    def _pick_labeled_indices(self) -> set[int]:
        cfg = self.config
        if cfg.mode == "fs":
            return set(range(len(self.samples)))
        if cfg.mode == "ws":
            return set()
        # ss: one uniform draw without replacement, fixed for the whole run
        count = int(round(cfg.labeled_fraction * len(self.samples)))
        picker = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x5EED]))
        chosen = picker.choice(len(self.samples), size=count, replace=False)
        return set(int(i) for i in chosen)

    def _draw_background(self, fg_index: int) -> ParagraphSample:
        while True:
            idx = int(self.rng.integers(0, len(self.samples)))
            if idx != fg_index:
                return self.samples[idx]

    def _forward_sample(self, sample: ParagraphSample, index: int):
        bg = self._draw_background(index)
        comp = self.composer.compose(
            sample.features, bg.features, self.rng,
            fg_video_id=sample.video_id, bg_video_id=bg.video_id)

        model = self.model
        sent_feats = model.encode_sentences(sample.sentences)
        query = model.encode_query(sent_feats)
        memory_aug = model.encode_video(comp.features.values)
        memory_inf = model.encode_video(sample.features.values)
        state_aug = model.decode(memory_aug, query)
        state_inf = model.decode(memory_inf, query)
        aug = BranchOutputs("augmentation", state_aug, model.predict_spans(state_aug))
        inf = BranchOutputs("inference", state_inf, model.predict_spans(state_inf))

        para, sent = self._labels_cache[sample.video_id]
        labels = StepLabels(
            pseudo_interval=comp.pseudo_interval,
            paragraph_concepts=para,
            sentence_concepts=sent,
        )
        logits = model.concept_logits(query, self._concept_vectors)
        return aug, inf, labels, logits

    def train_step(self, batch: list[tuple[int, ParagraphSample]]) -> dict:
        """One optimizer update over a batch of (index, sample) pairs; returns
        the batch-averaged loss breakdown as plain floats."""
        self.model.train()
        self.optimizer.zero_grad()
        keys = ("screg", "oga", "csc", "cb", "ar", "pa", "fs", "total")
        sums = dict.fromkeys(keys, 0.0)
        totals = []
        for index, sample in batch:
            aug, inf, labels, logits = self._forward_sample(sample, index)
            parts = compose_weakly_supervised(
                aug, inf, labels, self.config.weights, logits)
            total = parts["total"]
            fs_value = 0.0
            if index in self.labeled_indices:
                fs = fully_supervised(inf, sample.gt_intervals)
                total = total + fs
                fs_value = float(fs.detach())
            if not torch.isfinite(total):
                raise TrainingAbort(sample.video_id, {
                    key: float(parts[key].detach())
                    for key in ("screg", "oga", "csc", "cb", "ar", "pa")
                })
            totals.append(total)
            for key in ("screg", "oga", "csc", "cb", "ar", "pa"):
                sums[key] += float(parts[key].detach())
            sums["fs"] += fs_value
            sums["total"] += float(total.detach())
        loss = torch.stack(totals).mean()
        loss.backward()
        if self.config.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(self.model.parameters(), self.config.grad_clip)
        self.optimizer.step()
        self.step += 1
        count = len(batch)
        return {key: sums[key] / count for key in keys}

    def train_epoch(self) -> list[dict]:
        order = self.rng.permutation(len(self.samples))
        logs = []
        batch_size = self.config.batch_size
        for lo in range(0, len(order), batch_size):
            chunk = order[lo:lo + batch_size]
            batch = [(int(i), self.samples[int(i)]) for i in chunk]
            breakdown = self.train_step(batch)
            breakdown["step"] = self.step
            breakdown["epoch"] = self.epoch
            logs.append(breakdown)
        self.epoch += 1
        return logs

    def train(self, epochs: int | None = None, log_sink=None) -> list[dict]:
        epochs = self.config.epochs if epochs is None else epochs
        logs = []
        for _ in range(epochs):
            for row in self.train_epoch():
                logs.append(row)
                if log_sink is not None:
                    log_sink(row)
        return logs

    # -- checkpointing ------------------------------------------------------

    def save_checkpoint(self, path: Path | str) -> None:
        save_checkpoint(path, self.model, self.optimizer, self.config,
                        epoch=self.epoch, step=self.step, np_rng=self.rng)

    def restore(self, ckpt: "Checkpoint") -> None:
        if ckpt.config_hash != config_hash(self.config):
            raise CheckpointError("checkpoint config hash does not match trainer config")
        self.model.load_state_dict(ckpt.model_state)
        self.optimizer.load_state_dict(ckpt.optimizer_state)
        self.epoch = ckpt.epoch
        self.step = ckpt.step
        self.rng.bit_generator.state = ckpt.np_rng_state
        torch.set_rng_state(ckpt.torch_rng_state)


def infer(model: GroundingModel, sample: ParagraphSample) -> GroundingPrediction:
    """Inference-branch-only forward: no composition, no concept prediction."""
    return model.infer(sample)


@dataclass
class Checkpoint:
    epoch: int
    step: int
    config: dict
    config_hash: str
    model_state: dict
    optimizer_state: dict
    np_rng_state: dict
    torch_rng_state: torch.Tensor

    def train_config(self) -> TrainConfig:
        return train_config_from_dict(self.config)


def _flatten_optimizer_state(optim_state: dict):
    """Split an optimizer state dict into JSON-safe structure + named tensors."""
    tensors = {}
    state_meta = {}
    for pid, entry in optim_state["state"].items():
        entry_meta = {}
        for key, value in entry.items():
            if torch.is_tensor(value):
                name = f"optim.{pid}.{key}"
                tensors[name] = value
                entry_meta[key] = {"__tensor__": name}
            else:
                entry_meta[key] = value
        state_meta[str(pid)] = entry_meta
    return {"state": state_meta, "param_groups": optim_state["param_groups"]}, tensors


def _rebuild_optimizer_state(meta: dict, tensors: dict) -> dict:
    state = {}
    for pid, entry_meta in meta["state"].items():
        entry = {}
        for key, value in entry_meta.items():
            if isinstance(value, dict) and "__tensor__" in value:
                entry[key] = tensors[value["__tensor__"]]
            else:
                entry[key] = value
        state[int(pid)] = entry
    return {"state": state, "param_groups": meta["param_groups"]}


def save_checkpoint(
    path: Path | str,
    model: GroundingModel,
    optimizer: torch.optim.Optimizer,
    config: TrainConfig,
    epoch: int,
    step: int,
    np_rng: np.random.Generator,
) -> None:
    tensors: dict[str, torch.Tensor] = {}
    for name, value in model.state_dict().items():
        tensors[f"model.{name}"] = value
    optim_meta, optim_tensors = _flatten_optimizer_state(optimizer.state_dict())
    tensors.update(optim_tensors)
    tensors["rng.torch"] = torch.get_rng_state()

    manifest = []
    payload = bytearray()
    for name in sorted(tensors):
        tensor = tensors[name].detach().contiguous().cpu()
        raw = tensor.numpy().tobytes()
        manifest.append({
            "name": name,
            "dtype": str(tensor.dtype).removeprefix("torch."),
            "shape": list(tensor.shape),
            "offset": len(payload),
            "nbytes": len(raw),
        })
        payload.extend(raw)

    header = {
        "version": CHECKPOINT_VERSION,
        "epoch": epoch,
        "step": step,
        "config": config.to_dict(),
        "config_hash": config_hash(config),
        "np_rng": np_rng.bit_generator.state,
        "optimizer": optim_meta,
        "tensors": manifest,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, 0))
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(bytes(payload))


def load_checkpoint(path: Path | str, expected_config: TrainConfig | None = None,
                    force: bool = False) -> Checkpoint:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 24 or raw[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, _reserved = struct.unpack("<II", raw[8:16])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (header_len,) = struct.unpack("<Q", raw[16:24])
    try:
        header = json.loads(raw[24:24 + header_len].decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from exc
    payload = raw[24 + header_len:]

    tensors = {}
    for entry in header["tensors"]:
        dtype = _DTYPES.get(entry["dtype"])
        if dtype is None:
            raise CheckpointError(f"{path}: unknown tensor dtype {entry['dtype']!r}")
        chunk = payload[entry["offset"]: entry["offset"] + entry["nbytes"]]
        if len(chunk) != entry["nbytes"]:
            raise CheckpointError(f"{path}: truncated tensor payload for {entry['name']!r}")
        array = np.frombuffer(chunk, dtype=str(np.dtype(entry["dtype"]))).copy()
        tensors[entry["name"]] = torch.from_numpy(array).to(dtype).reshape(entry["shape"])

    if expected_config is not None and not force:
        if header["config_hash"] != config_hash(expected_config):
            raise CheckpointError(
                f"{path}: config hash mismatch (checkpoint trained with different settings)")

    model_state = {
        name.removeprefix("model."): tensor
        for name, tensor in tensors.items() if name.startswith("model.")
    }
    optimizer_state = _rebuild_optimizer_state(header["optimizer"], tensors)
    np_state = header["np_rng"]
    return Checkpoint(
        epoch=header["epoch"],
        step=header["step"],
        config=header["config"],
        config_hash=header["config_hash"],
        model_state=model_state,
        optimizer_state=optimizer_state,
        np_rng_state=np_state,
        torch_rng_state=tensors["rng.torch"],
    )


def run_training(
    config: TrainConfig,
    train_samples: list[ParagraphSample],
    concepts: ConceptDictionary,
    table: EmbeddingTable,
    log_sink=None,
    val_samples: list[ParagraphSample] | None = None,
) -> tuple[GroundingModel, SiameseTrainer, list[dict]]:
    """Seed everything from the config, build the model, train for the
    configured number of epochs.

    With ``model_selection == "best-val"`` and a validation split given, the
    per-epoch validation mIoU picks the parameters kept at the end (earliest
    epoch wins ties); otherwise the final epoch's parameters stand.
    """
    from .evaluation import evaluate

    torch.manual_seed(config.seed)
    feature_dim = train_samples[0].features.dim
    model = build_model(config, feature_dim, table)
    trainer = SiameseTrainer(model, train_samples, config, concepts)

    select = config.model_selection == "best-val" and val_samples
    best_miou, best_state, best_epoch = -1.0, None, -1
    logs = []
    for _ in range(config.epochs):
        for row in trainer.train_epoch():
            logs.append(row)
            if log_sink is not None:
                log_sink(row)
        if select:
            preds = {s.video_id: model.infer(s) for s in val_samples}
            miou = evaluate(preds, val_samples, config.iou_thresholds).miou
            if miou > best_miou:
                best_miou = miou
                best_epoch = trainer.epoch
                best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    if best_state is not None:
        model.load_state_dict(best_state)
        trainer.selected_epoch = best_epoch
        trainer.selected_val_miou = best_miou
    return model, trainer, logs
