"""Transfer-learning loop: frozen encoder, Adam on the two-layer head.

The encoder never receives a gradient, so features can be extracted once
per image and cached; with caching disabled the loop recomputes them each
time and lands on bit-identical parameters. Everything is seeded and the
shuffle for epoch e is derived from (seed, e), so runs reproduce exactly.
"""

from __future__ import annotations

import csv
import io
import logging
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import evaluator, weights_io
from .dataset import DatasetManifest, ManifestEntry, load_entry_input
from .tensor_core import gelu, gelu_grad
from .vit_model import (
    HeadParams,
    ModelConfig,
    apply_head,
    extract_features,
    random_head_params,
)

__all__ = [
    "TrainConfig",
    "AdamState",
    "EpochStats",
    "TrainReport",
    "cross_entropy",
    "cross_entropy_batch",
    "head_backward",
    "adam_step",
    "extract_all_features",
    "train",
]

log = logging.getLogger(__name__)


def _atomic_write_text(path: str, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)),
                               prefix=".tmp-train-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 32
    epochs: int = 15
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    feature_cache: bool = True

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")


@dataclass
class AdamState:
    """First/second moments per head tensor plus the step counter."""

    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, head: HeadParams) -> "AdamState":
        shapes = {"w1": head.w1, "b1": head.b1, "w2": head.w2, "b2": head.b2}
        return cls(
            m={k: np.zeros_like(p, dtype=np.float64) for k, p in shapes.items()},
            v={k: np.zeros_like(p, dtype=np.float64) for k, p in shapes.items()},
            t=0,
        )


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


@dataclass(frozen=True)
class TrainReport:
    epochs: Tuple[EpochStats, ...]
    best_epoch: int
    best_val_accuracy: float

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "train_acc", "val_loss", "val_acc"])
        for e in self.epochs:
            writer.writerow(
                [e.epoch, repr(e.train_loss), repr(e.train_acc), repr(e.val_loss), repr(e.val_acc)]
            )
        return buf.getvalue()


def cross_entropy(logits: np.ndarray, label: int) -> float:
    """-log softmax(logits)[label], evaluated via log-sum-exp."""
    logits = np.asarray(logits, dtype=np.float64).reshape(-1)
    if not 0 <= label < logits.size:
        raise IndexError(f"label {label} out of range for {logits.size} classes")
    m = logits.max()
    lse = m + np.log(np.exp(logits - m).sum())
    return float(lse - logits[label])


def cross_entropy_batch(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean cross-entropy over a batch."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    m = logits.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(logits - m).sum(axis=1))
    return float(np.mean(lse - logits[np.arange(labels.size), labels]))


def head_backward(
    features: np.ndarray, labels, head: HeadParams
) -> Tuple[float, Dict[str, np.ndarray]]:
    """Loss and exact gradients of the head for one sample or a batch.

    Gradients are analytic (chain rule through GELU and softmax), averaged
    over the batch, and returned at double precision. The encoder is not
    part of the graph.
    """
    f = np.asarray(features, dtype=np.float64)
    single = f.ndim == 1
    f = np.atleast_2d(f)
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if f.shape[0] != y.size:
        raise ValueError(f"{f.shape[0]} feature rows vs {y.size} labels")
    if f.shape[1] != head.w1.shape[0]:
        raise ValueError(
            f"feature width {f.shape[1]} does not match head input {head.w1.shape[0]}"
        )
    num_classes = head.w2.shape[1]
    if y.size and (y.min() < 0 or y.max() >= num_classes):
        raise IndexError(f"label out of range [0, {num_classes})")

    w1 = head.w1.astype(np.float64)
    w2 = head.w2.astype(np.float64)
    b = f.shape[0]
    h1 = f @ w1 + head.b1.astype(np.float64)
    a1 = gelu(h1)
    logits = a1 @ w2 + head.b2.astype(np.float64)

    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    probs = e / e.sum(axis=1, keepdims=True)
    loss = float(
        np.mean(np.log(e.sum(axis=1)) + m[:, 0] - logits[np.arange(b), y])
    )

    dlogits = probs.copy()
    dlogits[np.arange(b), y] -= 1.0
    dlogits /= b
    grads = {
        "w2": a1.T @ dlogits,
        "b2": dlogits.sum(axis=0),
    }
    da1 = dlogits @ w2.T
    dh1 = da1 * gelu_grad(h1)
    grads["w1"] = f.T @ dh1
    grads["b1"] = dh1.sum(axis=0)
    return loss, grads


def adam_step(
    head: HeadParams,
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    cfg: TrainConfig,
) -> Tuple[HeadParams, AdamState]:
    """One bias-corrected Adam update; returns new params and state."""
    t = state.t + 1
    new_params: Dict[str, np.ndarray] = {}
    new_m: Dict[str, np.ndarray] = {}
    new_v: Dict[str, np.ndarray] = {}
    for key, param in (("w1", head.w1), ("b1", head.b1), ("w2", head.w2), ("b2", head.b2)):
        g = np.asarray(grads[key], dtype=np.float64)
        if g.shape != param.shape:
            raise ValueError(
                f"gradient for {key} has shape {g.shape}, parameter is {param.shape}"
            )
        m = cfg.beta1 * state.m[key] + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * state.v[key] + (1.0 - cfg.beta2) * g * g
        m_hat = m / (1.0 - cfg.beta1**t)
        v_hat = v / (1.0 - cfg.beta2**t)
        updated = param.astype(np.float64) - cfg.learning_rate * m_hat / (
            np.sqrt(v_hat) + cfg.eps
        )
        new_params[key] = updated.astype(param.dtype)
        new_m[key] = m
        new_v[key] = v
    return (
        HeadParams(w1=new_params["w1"], b1=new_params["b1"], w2=new_params["w2"], b2=new_params["b2"]),
        AdamState(m=new_m, v=new_v, t=t),
    )


def extract_all_features(
    entries: Sequence[ManifestEntry],
    weights: Mapping[str, np.ndarray],
    model_cfg: ModelConfig,
    threads: Optional[int] = None,
) -> np.ndarray:
    """Features for each entry, in entry order regardless of thread count."""

    def one(entry: ManifestEntry) -> np.ndarray:
        return extract_features(load_entry_input(entry, model_cfg), weights, model_cfg)

    if threads is not None and threads <= 1:
        rows = [one(e) for e in entries]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(one, entries))
    return np.stack(rows).astype(np.float32)


def _epoch_metrics(
    features: np.ndarray, labels: np.ndarray, head: HeadParams, num_classes: int
) -> Tuple[float, float, np.ndarray]:
    logits = apply_head(features, head)
    loss = cross_entropy_batch(logits, labels)
    preds = np.argmax(logits, axis=1)
    cm = evaluator.confusion(preds, labels, num_classes)
    return loss, evaluator.accuracy(cm), preds


def train(
    weights: Mapping[str, np.ndarray],
    manifest: DatasetManifest,
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    out_dir: Optional[str] = None,
    initial_head: Optional[HeadParams] = None,
    threads: Optional[int] = None,
) -> Tuple[TrainReport, HeadParams]:
    """Train the head on the manifest's train split, checkpoint on best
    validation accuracy (ties keep the earlier epoch).

    When `out_dir` is given, writes `report.csv` and the head-only overlay
    `best_head.vitw` there.
    """
    train_entries = manifest.entries_for_split("train")
    val_entries = manifest.entries_for_split("val")
    if not train_entries:
        raise ValueError("train split is empty")
    if not val_entries:
        raise ValueError("val split is empty")
    label_index = manifest.label_to_index
    num_classes = len(label_index)
    if num_classes != model_cfg.num_classes:
        raise ValueError(
            f"manifest has {num_classes} classes but model is configured "
            f"for {model_cfg.num_classes}"
        )
    y_train = np.array([label_index[e.label] for e in train_entries], dtype=np.int64)
    y_val = np.array([label_index[e.label] for e in val_entries], dtype=np.int64)

    def features_of(entries: Sequence[ManifestEntry]) -> np.ndarray:
        return extract_all_features(entries, weights, model_cfg, threads)

    if cfg.feature_cache:
        log.info("caching features for %d train / %d val images",
                 len(train_entries), len(val_entries))
        cached_train = features_of(train_entries)
        cached_val = features_of(val_entries)
        train_feats = lambda: cached_train
        val_feats = lambda: cached_val
    else:
        train_feats = lambda: features_of(train_entries)
        val_feats = lambda: features_of(val_entries)

    head = initial_head.copy() if initial_head is not None else random_head_params(
        model_cfg, cfg.seed
    )
    head.validate(model_cfg)
    state = AdamState.zeros_like(head)

    best_head = head.copy()
    best_epoch = 0
    best_val_acc = -1.0
    records: List[EpochStats] = []
    n_train = len(train_entries)

    for epoch in range(1, cfg.epochs + 1):
        rng = np.random.default_rng([cfg.seed, epoch])
        perm = rng.permutation(n_train)
        feats_epoch = train_feats()
        for start in range(0, n_train, cfg.batch_size):
            batch = perm[start : start + cfg.batch_size]
            _, grads = head_backward(feats_epoch[batch], y_train[batch], head)
            head, state = adam_step(head, grads, state, cfg)

        train_loss, train_acc, _ = _epoch_metrics(
            train_feats(), y_train, head, num_classes
        )
        val_loss, val_acc, _ = _epoch_metrics(val_feats(), y_val, head, num_classes)
        records.append(EpochStats(epoch, train_loss, train_acc, val_loss, val_acc))
        log.info(
            "epoch %d: train loss %.4f acc %.4f | val loss %.4f acc %.4f",
            epoch, train_loss, train_acc, val_loss, val_acc,
        )
        if val_acc > best_val_acc:
            best_val_acc = val_acc
            best_epoch = epoch
            best_head = head.copy()

    report = TrainReport(
        epochs=tuple(records), best_epoch=best_epoch, best_val_accuracy=best_val_acc
    )
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        _atomic_write_text(os.path.join(out_dir, "report.csv"), report.to_csv())
        weights_io.save_weights(
            best_head.as_dict(), os.path.join(out_dir, "best_head.vitw")
        )
    return report, best_head
