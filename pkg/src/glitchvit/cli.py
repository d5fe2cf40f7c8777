"""Command-line entry point for the glitch classification pipeline.

Subcommands wrap the library modules for batch use. Logs go to stderr;
machine-readable output goes to files or stdout. Exit codes: 0 success,
1 I/O failure, 2 validation/usage error. Output files are written via
temp-then-rename, so failures never leave partial artifacts.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import logging
import os
import sys
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from . import dataset, evaluator, qscan, synthetic, trainer, weights_io
from .trainer import TrainConfig
from .vit_model import (
    HeadParams,
    ModelConfig,
    apply_head,
    forward,
    predict,
    required_tensor_shapes,
)

log = logging.getLogger("glitchvit")

_TRAIN_FIELDS = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
_MODEL_FIELDS = {f.name: f.type for f in dataclasses.fields(ModelConfig)}


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "on", "yes"):
        return True
    if t in ("0", "false", "off", "no"):
        return False
    raise ValueError(f"cannot parse boolean from {text!r}")


def _parse_triple(text: str) -> Tuple[float, float, float]:
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 3:
        raise ValueError(f"expected three comma-separated values, got {text!r}")
    return tuple(parts)


def read_config_file(path: str) -> Dict[str, str]:
    """Flat key=value config; blank lines and #-comments ignored."""
    out: Dict[str, str] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {stripped!r}")
            key, value = stripped.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def resolve_configs(
    file_cfg: Dict[str, str], overrides: Dict[str, object]
) -> Tuple[TrainConfig, ModelConfig]:
    """Merge config-file values with flag overrides (flags win)."""
    train_kwargs: Dict[str, object] = {}
    model_kwargs: Dict[str, object] = {}
    for key, raw in file_cfg.items():
        if key in _TRAIN_FIELDS:
            target, caster = train_kwargs, _caster_for_train(key)
        elif key in _MODEL_FIELDS:
            target, caster = model_kwargs, _caster_for_model(key)
        else:
            raise ValueError(f"unknown config key {key!r}")
        target[key] = caster(raw)
    for key, value in overrides.items():
        if value is None:
            continue
        if key in _TRAIN_FIELDS:
            train_kwargs[key] = value
        elif key in _MODEL_FIELDS:
            model_kwargs[key] = value
        else:
            raise ValueError(f"unknown config override {key!r}")
    return TrainConfig(**train_kwargs), ModelConfig(**model_kwargs)


def _caster_for_train(key: str):
    if key in ("batch_size", "epochs", "seed"):
        return int
    if key == "feature_cache":
        return _parse_bool
    return float


def _caster_for_model(key: str):
    if key in ("norm_mean", "norm_std"):
        return _parse_triple
    return int


def _echo_config(train_cfg: TrainConfig, model_cfg: ModelConfig) -> str:
    lines = []
    for cfg in (train_cfg, model_cfg):
        for f in dataclasses.fields(cfg):
            value = getattr(cfg, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"{f.name}={value}")
    text = "\n".join(lines)
    for line in lines:
        log.info("config %s", line)
    return text


def _repro_line(seed: int, config_text: str, weight_paths: Sequence[str]) -> None:
    digest = hashlib.sha256(config_text.encode("utf-8")).hexdigest()[:16]
    crcs = ",".join(
        f"{os.path.basename(p)}:{weights_io.stored_crc32(p):08x}" for p in weight_paths
    )
    log.info("repro seed=%s config_digest=%s weights_crc=%s", seed, digest, crcs or "-")


def _apply_norm_manifest(model_cfg: ModelConfig, path: Optional[str]) -> ModelConfig:
    """Override normalization constants from an exporter manifest file."""
    if path is None:
        return model_cfg
    kv = read_config_file(path)
    mean = tuple(float(kv[f"norm_mean_{c}"]) for c in "rgb")
    std = tuple(float(kv[f"norm_std_{c}"]) for c in "rgb")
    return dataclasses.replace(model_cfg, norm_mean=mean, norm_std=std)


def _load_model_weights(
    weights_path: str, head_path: Optional[str], model_cfg: ModelConfig
) -> Dict[str, np.ndarray]:
    """Base weights plus an optional head-only overlay, fully validated."""
    weights = dict(
        weights_io.load_weights(
            weights_path, required_tensor_shapes(model_cfg, include_head=head_path is None)
        )
    )
    if head_path is not None:
        head_shapes = {
            name: shape
            for name, shape in required_tensor_shapes(model_cfg).items()
            if name.startswith("head/")
        }
        overlay = weights_io.load_weights(head_path, head_shapes)
        weights.update({k: v for k, v in overlay.items() if k.startswith("head/")})
    return weights


def cmd_qscan(args: argparse.Namespace) -> int:
    series = qscan.load_strain(args.strain)
    white = qscan.whiten(series)
    spec = qscan.q_transform(
        white,
        q=args.q,
        f_min=args.f_min,
        f_max=args.f_max,
        time_bins=args.time_bins,
        freq_bins=args.freq_bins,
    )
    image = qscan.render(spec, crop_half_width=args.crop_half_width, event_time=args.event_gps)
    qscan.save_image(image, args.out)
    log.info("wrote %s", args.out)
    return 0


def cmd_ingest(args: argparse.Namespace) -> int:
    manifest = dataset.ingest_directory(args.root)
    dataset.write_manifest(manifest, args.out)
    log.info("ingested %d entries across %d classes into %s",
             len(manifest.entries), len(manifest.class_list), args.out)
    return 0


def cmd_split(args: argparse.Namespace) -> int:
    manifest = dataset.read_manifest(args.manifest)
    ratios = _parse_triple(args.ratios)
    split = dataset.split_dataset(manifest, ratios=ratios, seed=args.seed)
    out = args.out or args.manifest
    dataset.write_manifest(split, out)
    print("label,train,val,test")
    for label in split.class_list:
        c = split.split_counts(label)
        print(f"{label},{c['train']},{c['val']},{c['test']}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    file_cfg = read_config_file(args.config) if args.config else {}
    overrides = {
        "seed": args.seed,
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "learning_rate": args.learning_rate,
    }
    train_cfg, model_cfg = resolve_configs(file_cfg, overrides)
    model_cfg = _apply_norm_manifest(model_cfg, args.norm_manifest)
    config_text = _echo_config(train_cfg, model_cfg)
    _repro_line(train_cfg.seed, config_text, [args.weights])

    manifest = dataset.read_manifest(args.manifest)
    weights = weights_io.load_weights(
        args.weights, required_tensor_shapes(model_cfg, include_head=False)
    )
    report, _ = trainer.train(
        weights, manifest, model_cfg, train_cfg, out_dir=args.out_dir, threads=args.threads
    )
    log.info(
        "best epoch %d with validation accuracy %.4f",
        report.best_epoch, report.best_val_accuracy,
    )
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    file_cfg = read_config_file(args.config) if args.config else {}
    train_cfg, model_cfg = resolve_configs(file_cfg, {})
    model_cfg = _apply_norm_manifest(model_cfg, args.norm_manifest)
    config_text = _echo_config(train_cfg, model_cfg)
    _repro_line(train_cfg.seed, config_text, [args.weights, args.head])

    manifest = dataset.read_manifest(args.manifest)
    weights = _load_model_weights(args.weights, args.head, model_cfg)
    head = HeadParams.from_weight_set(weights)
    entries = manifest.entries_for_split(args.split)
    if not entries:
        raise ValueError(f"{args.split} split is empty")
    label_index = manifest.label_to_index
    feats = trainer.extract_all_features(entries, weights, model_cfg, args.threads)
    logits = apply_head(feats, head)
    preds = np.argmax(logits, axis=1)
    labels = np.array([label_index[e.label] for e in entries], dtype=np.int64)
    cm = evaluator.confusion(preds, labels, len(label_index), manifest.class_list)
    metrics = evaluator.standard_metrics(cm)
    paths = evaluator.emit_report(cm, metrics, args.out_dir)
    pred_lines = ["path,true,pred"]
    classes = manifest.class_list
    for e, p in zip(entries, preds):
        pred_lines.append(f"{e.path},{e.label},{classes[p]}")
    pred_path = os.path.join(args.out_dir, "predictions.csv")
    evaluator.atomic_write_text(pred_path, "\n".join(pred_lines) + "\n")
    log.info("accuracy %.4f, reports in %s", metrics["accuracy"], args.out_dir)
    print(f"accuracy={metrics['accuracy']!r}")
    print(f"f1_macro={metrics['f1_macro']!r}")
    print(f"f1_weighted={metrics['f1_weighted']!r}")
    for name in ("confusion_csv", "metrics", "confusion_png"):
        log.info("wrote %s", paths[name])
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    file_cfg = read_config_file(args.config) if args.config else {}
    _, model_cfg = resolve_configs(file_cfg, {})
    model_cfg = _apply_norm_manifest(model_cfg, args.norm_manifest)
    weights = _load_model_weights(args.weights, args.head, model_cfg)
    _repro_line(0, _echo_config(TrainConfig(), model_cfg),
                [p for p in (args.weights, args.head) if p])

    if args.labels:
        classes = dataset.read_manifest(args.labels).class_list
    else:
        classes = [f"class_{i}" for i in range(model_cfg.num_classes)]
    img = qscan.load_image(args.image, size=model_cfg.image_size)
    planes = qscan.image_to_input(img, model_cfg.norm_mean, model_cfg.norm_std)
    logits = forward(planes, weights, model_cfg)
    _, probs = predict(logits)
    top = np.argsort(-probs)[:5]
    for rank, idx in enumerate(top, 1):
        print(f"{rank} {classes[idx]} {probs[idx]:.6f}")
    return 0


def cmd_synth_strain(args: argparse.Namespace) -> int:
    series, event_gps = synthetic.synth_strain(
        args.kind, seed=args.seed, sample_rate=args.sample_rate, duration=args.duration
    )
    qscan.save_strain(series, args.out)
    print(f"event_gps={event_gps!r}")
    log.info("wrote %s (%s, %.1f s at %.0f Hz)",
             args.out, args.kind, args.duration, args.sample_rate)
    return 0


def cmd_synth_dataset(args: argparse.Namespace) -> int:
    manifest = synthetic.make_toy_dataset(
        args.root,
        per_class=args.per_class,
        seed=args.seed,
        threads=args.threads,
        manifest_path=args.out,
    )
    log.info("rendered %d images into %s", len(manifest.entries), args.root)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="glitchvit",
        description="Glitch classification: Q-scans, ViT inference, head training.",
    )
    parser.add_argument("--threads", type=int, default=None,
                        help="worker cap for parallel stages (default: machine)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("qscan", help="render a strain file to a glitch image")
    p.add_argument("--strain", required=True)
    p.add_argument("--event-gps", type=float, required=True)
    p.add_argument("--q", type=float, default=qscan.DEFAULT_Q)
    p.add_argument("--out", required=True)
    p.add_argument("--f-min", type=float, default=qscan.DEFAULT_F_MIN)
    p.add_argument("--f-max", type=float, default=qscan.DEFAULT_F_MAX)
    p.add_argument("--time-bins", type=int, default=qscan.DEFAULT_BINS)
    p.add_argument("--freq-bins", type=int, default=qscan.DEFAULT_BINS)
    p.add_argument("--crop-half-width", type=float, default=0.5)
    p.set_defaults(func=cmd_qscan)

    p = sub.add_parser("ingest", help="build a manifest from <root>/<label>/<file>")
    p.add_argument("--root", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("split", help="stratified train/val/test split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ratios", default="7,1.5,1.5")
    p.add_argument("--out", default=None, help="output manifest (default: in place)")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train the classifier head")
    p.add_argument("--manifest", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--norm-manifest", default=None,
                   help="exporter manifest supplying normalization constants")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained head on a split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--head", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--config", default=None)
    p.add_argument("--norm-manifest", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="top-5 classes for one image")
    p.add_argument("--image", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--head", default=None)
    p.add_argument("--labels", default=None,
                   help="manifest whose class list names the outputs")
    p.add_argument("--config", default=None)
    p.add_argument("--norm-manifest", default=None)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("synth-strain", help="write a synthetic strain file")
    p.add_argument("--kind", choices=synthetic.TOY_CLASSES, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sample-rate", type=float, default=1024.0)
    p.add_argument("--duration", type=float, default=6.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth_strain)

    p = sub.add_parser("synth-dataset", help="render a toy labeled image tree")
    p.add_argument("--root", required=True)
    p.add_argument("--per-class", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="manifest CSV to write")
    p.set_defaults(func=cmd_synth_dataset)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(
        stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(message)s"
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError, IndexError) as exc:
        log.error("%s", exc)
        return 2
    except OSError as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
