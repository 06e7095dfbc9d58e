"""Command-line entry point.

Subcommands: synth-gen (write a synthetic dataset), train, eval, predict,
and inspect (compose | decode) for debugging dumps. Every command writes a
manifest next to its outputs recording the resolved config, seed, and input
content hashes. Exit codes: 0 success, 1 runtime failure, 2 usage/config
error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np
import torch

from .compose import ComposeError, PseudoComposer
from .config import ConfigError, TrainConfig, load_train_config
from .data import (
    DatasetError,
    build_concept_dictionary,
    load_dataset,
    read_concept_list,
    read_embedding_table,
)
from .decoder import attention_centroid
from .evaluation import EvaluationError, evaluate
from .intervals import Interval
from .model import GroundingPrediction
from .synthetic import GenerationError, generate_synthetic, load_synth_config, write_synthetic
from .trainer import (
    CheckpointError,
    TrainingAbort,
    build_model,
    infer,
    load_checkpoint,
    run_training,
)

DATA_ROOT_ENV = "SIAMVPG_DATA_ROOT"


class UsageError(Exception):
    pass


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir: Path, command: str, config: dict, seed: int | None,
                   inputs: dict[str, Path], outputs: list[str]) -> None:
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": {name: {"path": str(p), "sha256": _sha256(p)}
                   for name, p in sorted(inputs.items()) if Path(p).is_file()},
        "outputs": sorted(outputs),
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)


def _resolve_data_dir(arg: str | None) -> Path:
    if arg:
        return Path(arg)
    env = os.environ.get(DATA_ROOT_ENV)
    if env:
        return Path(env)
    raise UsageError(f"--data not given and ${DATA_ROOT_ENV} is not set")


def _load_split(data_dir: Path, split: str):
    split_dir = data_dir / split
    return load_dataset(split_dir / "features", split_dir / "annotations.json")


def _load_environment(data_dir: Path, config: TrainConfig, train_samples):
    table = read_embedding_table(data_dir / "embeddings.json")
    concepts_path = data_dir / "concepts.json"
    explicit = read_concept_list(concepts_path) if concepts_path.exists() else None
    k = len(explicit) if explicit is not None else config.num_concepts
    return table, build_concept_dictionary(train_samples, table, k, explicit_list=explicit)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth_gen(args) -> int:
    config = load_synth_config(args.config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset = generate_synthetic(config)
    write_synthetic(dataset, out_dir)
    outputs = ["train", "val", "test", "embeddings.json", "concepts.json"]
    write_manifest(out_dir, "synth-gen", json.loads(Path(args.config).read_text()),
                   config.seed, {"config": Path(args.config)}, outputs)
    print(f"wrote synthetic dataset to {out_dir}")
    return 0


def cmd_train(args) -> int:
    if args.mode:
        from .config import train_config_from_dict
        try:
            raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: invalid JSON ({exc})") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{args.config}: config must be a JSON object")
        raw["mode"] = args.mode
        config = train_config_from_dict(raw)
    else:
        config = load_train_config(args.config)
    data_dir = _resolve_data_dir(args.data)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    train_samples = _load_split(data_dir, "train")
    table, concepts = _load_environment(data_dir, config, train_samples)
    val_samples = None
    if config.model_selection == "best-val" and (data_dir / "val" / "annotations.json").exists():
        val_samples = _load_split(data_dir, "val")
        if any(s.gt_intervals is None for s in val_samples):
            val_samples = None  # weak-only validation split cannot drive selection

    log_path = out_dir / "train_log.jsonl"
    log_rows = []
    start = time.time()
    with open(log_path, "w", encoding="utf-8") as log_file:
        def sink(row: dict) -> None:
            entry = dict(row)
            entry["wall_time"] = round(time.time() - start, 3)
            log_file.write(json.dumps(entry, sort_keys=True) + "\n")
            log_rows.append(entry)

        model, trainer, _ = run_training(config, train_samples, concepts, table,
                                         log_sink=sink, val_samples=val_samples)

    ckpt_path = out_dir / "checkpoint.svpg"
    trainer.save_checkpoint(ckpt_path)
    if trainer.selected_epoch is not None:
        print(f"kept epoch {trainer.selected_epoch} parameters "
              f"(val mIoU {trainer.selected_val_miou:.4f})")

    from .report import training_curve
    training_curve(log_rows, out_dir / "train_loss.png")
    write_manifest(
        out_dir, "train", config.to_dict(), config.seed,
        {"config": Path(args.config),
         "annotations": data_dir / "train" / "annotations.json"},
        ["checkpoint.svpg", "train_log.jsonl", "train_loss.png"],
    )
    print(f"trained {config.epochs} epochs ({config.mode} mode); "
          f"checkpoint at {ckpt_path}")
    return 0


def _model_from_checkpoint(ckpt_path: Path, data_dir: Path):
    ckpt = load_checkpoint(ckpt_path)
    config = ckpt.train_config()
    train_samples = _load_split(data_dir, "train")
    table, _ = _load_environment(data_dir, config, train_samples)
    feature_dim = train_samples[0].features.dim
    model = build_model(config, feature_dim, table)
    model.load_state_dict(ckpt.model_state)
    return model, config


def _predictions_for_split(model, samples) -> dict[str, GroundingPrediction]:
    return {s.video_id: infer(model, s) for s in samples}


def _predictions_to_doc(preds: dict[str, GroundingPrediction],
                        thresholds: tuple[float, ...]) -> dict:
    return {
        "thresholds": list(thresholds),
        "predictions": [
            {
                "video_id": vid,
                "paragraph": [p.paragraph.start, p.paragraph.end],
                "sentences": [[iv.start, iv.end] for iv in p.sentences],
            }
            for vid, p in sorted(preds.items())
        ],
    }


def _predictions_from_doc(doc: dict) -> tuple[dict[str, GroundingPrediction], tuple[float, ...]]:
    preds = {}
    for entry in doc["predictions"]:
        sentences = tuple(Interval(float(s), float(e)) for s, e in entry["sentences"])
        preds[entry["video_id"]] = GroundingPrediction(
            paragraph=Interval(float(entry["paragraph"][0]), float(entry["paragraph"][1])),
            sentences=sentences,
        )
    return preds, tuple(float(m) for m in doc.get("thresholds", (0.3, 0.5, 0.7)))


def cmd_predict(args) -> int:
    data_dir = _resolve_data_dir(args.data)
    model, config = _model_from_checkpoint(Path(args.ckpt), data_dir)
    samples = _load_split(data_dir, args.split)
    preds = _predictions_for_split(model, samples)
    doc = _predictions_to_doc(preds, config.iou_thresholds)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
    write_manifest(out_path.parent, "predict", config.to_dict(), config.seed,
                   {"checkpoint": Path(args.ckpt),
                    "annotations": data_dir / args.split / "annotations.json"},
                   [out_path.name])
    print(f"wrote predictions for {len(preds)} videos to {out_path}")
    return 0


def cmd_eval(args) -> int:
    from .report import eval_csv, eval_figures

    data_dir = _resolve_data_dir(args.data)
    samples = _load_split(data_dir, args.split)
    if bool(args.ckpt) == bool(args.preds):
        raise UsageError("eval needs exactly one of --ckpt or --preds")
    if args.ckpt:
        model, config = _model_from_checkpoint(Path(args.ckpt), data_dir)
        preds = _predictions_for_split(model, samples)
        thresholds = config.iou_thresholds
        config_doc = config.to_dict()
        seed = config.seed
        inputs = {"checkpoint": Path(args.ckpt)}
    else:
        doc = json.loads(Path(args.preds).read_text(encoding="utf-8"))
        preds, thresholds = _predictions_from_doc(doc)
        config_doc = {"thresholds": list(thresholds)}
        seed = None
        inputs = {"predictions": Path(args.preds)}

    report = evaluate(preds, samples, thresholds)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, sort_keys=True, indent=1)
    eval_csv(report, out_path.parent / "per_sample.csv")
    figures = eval_figures(report, out_path.parent)
    inputs["annotations"] = data_dir / args.split / "annotations.json"
    write_manifest(out_path.parent, "eval", config_doc, seed, inputs,
                   [out_path.name, "per_sample.csv"] + [p.name for p in figures])
    print(f"mIoU={report.miou:.4f} " +
          " ".join(f"R@{m:g}={r:.4f}" for m, r in sorted(report.recalls.items())))
    return 0


def cmd_inspect_compose(args) -> int:
    from .report import compose_figure

    data_dir = _resolve_data_dir(args.data)
    config = load_train_config(args.config)
    samples = _load_split(data_dir, "train")
    by_id = {s.video_id: s for s in samples}
    fg = by_id.get(args.video_id) if args.video_id else samples[0]
    if fg is None:
        raise UsageError(f"video {args.video_id!r} not in the training split")
    rng = np.random.default_rng(args.seed)
    composer = PseudoComposer(config.compose_config())
    others = [s for s in samples if s.video_id != fg.video_id]
    bg = others[int(rng.integers(0, len(others)))]
    comp = composer.compose(fg.features, bg.features, rng,
                            fg_video_id=fg.video_id, bg_video_id=bg.video_id)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    record = {
        "fg_video_id": comp.provenance.fg_video_id,
        "bg_video_id": comp.provenance.bg_video_id,
        "insert_index": comp.provenance.insert_index,
        "stride": comp.provenance.stride,
        "rescale": comp.provenance.rescale,
        "offset_start": comp.provenance.offset_start,
        "offset_end": comp.provenance.offset_end,
        "pseudo_interval": [comp.pseudo_interval.start, comp.pseudo_interval.end],
        "t_clips": config.t_clips,
    }
    with open(out_dir / "compose.json", "w", encoding="utf-8") as fh:
        json.dump(record, fh, sort_keys=True, indent=1)
    compose_figure(comp, out_dir / "compose.png")
    write_manifest(out_dir, "inspect-compose", config.to_dict(), args.seed,
                   {"config": Path(args.config)}, ["compose.json", "compose.png"])
    print(json.dumps(record, sort_keys=True))
    return 0


def cmd_inspect_decode(args) -> int:
    from .report import decode_csv, decode_figure

    data_dir = _resolve_data_dir(args.data)
    model, config = _model_from_checkpoint(Path(args.ckpt), data_dir)
    samples = _load_split(data_dir, args.split)
    by_id = {s.video_id: s for s in samples}
    sample = by_id.get(args.video_id) if args.video_id else samples[0]
    if sample is None:
        raise UsageError(f"video {args.video_id!r} not in the {args.split} split")

    model.eval()
    with torch.no_grad():
        sent_feats = model.encode_sentences(sample.sentences)
        query = model.encode_query(sent_feats)
        memory = model.encode_video(sample.features.values)
        state = model.decode(memory, query)
    rows = []
    from .intervals import boxes_to_spans
    for layer, anchors in enumerate(state.anchors):
        spans = boxes_to_spans(anchors)
        for q in range(spans.shape[0]):
            rows.append({
                "layer": layer,
                "query": q,
                "start": float(spans[q, 0]),
                "end": float(spans[q, 1]),
                "centroid_clip": float(attention_centroid(state, q, layer=layer)),
            })
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    decode_csv(rows, out_dir / "decode.csv")
    decode_figure(rows, out_dir / "decode.png")
    write_manifest(out_dir, "inspect-decode", config.to_dict(), config.seed,
                   {"checkpoint": Path(args.ckpt)}, ["decode.csv", "decode.png"])
    print(f"wrote {len(rows)} rows to {out_dir / 'decode.csv'}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="siamvpg")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-gen", help="generate a synthetic dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth_gen)

    p = sub.add_parser("train", help="train a grounding model")
    p.add_argument("--data")
    p.add_argument("--config", required=True)
    p.add_argument("--mode", choices=["ws", "ss", "fs"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="write per-video interval predictions")
    p.add_argument("--data")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="evaluate a checkpoint or stored predictions")
    p.add_argument("--data")
    p.add_argument("--ckpt")
    p.add_argument("--preds")
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="debugging dumps")
    inspect_sub = p.add_subparsers(dest="inspect_what", required=True)

    pc = inspect_sub.add_parser("compose", help="dump one pseudo-video composition")
    pc.add_argument("--data")
    pc.add_argument("--config", required=True)
    pc.add_argument("--seed", type=int, default=0)
    pc.add_argument("--video-id")
    pc.add_argument("--out", required=True)
    pc.set_defaults(func=cmd_inspect_compose)

    pd = inspect_sub.add_parser("decode", help="dump per-layer anchors and centroids")
    pd.add_argument("--data")
    pd.add_argument("--ckpt", required=True)
    pd.add_argument("--split", default="test")
    pd.add_argument("--video-id")
    pd.add_argument("--out", required=True)
    pd.set_defaults(func=cmd_inspect_decode)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DatasetError, GenerationError, ComposeError, CheckpointError,
            EvaluationError, TrainingAbort, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
