"""Test-set metrics: confusion matrix, accuracy, per-class recall, F1."""

from __future__ import annotations

import csv
import io
import os
import tempfile
from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Sequence, Union

import numpy as np

from . import qscan

__all__ = [
    "ConfusionMatrix",
    "F1Scores",
    "confusion",
    "accuracy",
    "per_class_accuracy",
    "f1",
    "emit_report",
    "read_confusion_csv",
    "atomic_write_text",
]


@dataclass(frozen=True)
class ConfusionMatrix:
    """counts[i, j] = samples with true class i predicted as class j."""

    counts: np.ndarray
    labels: tuple

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "labels", tuple(self.labels))
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ValueError(f"confusion matrix must be square, got {counts.shape}")
        if len(self.labels) != counts.shape[0]:
            raise ValueError(
                f"{len(self.labels)} labels for a {counts.shape[0]}-class matrix"
            )
        if np.any(counts < 0):
            raise ValueError("confusion matrix cells must be non-negative")

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion(
    preds: Sequence[int],
    labels: Sequence[int],
    num_classes: int,
    class_labels: Optional[Sequence[str]] = None,
) -> ConfusionMatrix:
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape:
        raise ValueError(
            f"length mismatch: {preds.size} predictions vs {labels.size} labels"
        )
    if preds.size and (preds.min() < 0 or preds.max() >= num_classes):
        raise ValueError(f"prediction index out of range [0, {num_classes})")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"label index out of range [0, {num_classes})")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (labels, preds), 1)
    if class_labels is None:
        class_labels = [str(i) for i in range(num_classes)]
    return ConfusionMatrix(counts=counts, labels=tuple(class_labels))


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise ValueError("cannot compute accuracy of an empty confusion matrix")
    return float(np.trace(cm.counts) / cm.total)


def per_class_accuracy(cm: ConfusionMatrix) -> np.ndarray:
    """Recall per true class; classes with no samples report NaN, not 0."""
    row_sums = cm.counts.sum(axis=1)
    diag = np.diag(cm.counts).astype(np.float64)
    out = np.full(cm.counts.shape[0], np.nan)
    nonempty = row_sums > 0
    out[nonempty] = diag[nonempty] / row_sums[nonempty]
    return out


@dataclass(frozen=True)
class F1Scores:
    per_class: np.ndarray
    macro: float
    weighted: float


def f1(cm: ConfusionMatrix) -> F1Scores:
    """Per-class F1 with the 0-convention when precision + recall is 0;
    macro is the unweighted mean, weighted is the support-weighted mean."""
    counts = cm.counts.astype(np.float64)
    diag = np.diag(counts)
    col = counts.sum(axis=0)
    row = counts.sum(axis=1)
    precision = np.divide(diag, col, out=np.zeros_like(diag), where=col > 0)
    recall = np.divide(diag, row, out=np.zeros_like(diag), where=row > 0)
    pr = precision + recall
    per_class = np.divide(
        2.0 * precision * recall, pr, out=np.zeros_like(diag), where=pr > 0
    )
    macro = float(per_class.mean()) if per_class.size else 0.0
    support = row
    weighted = float((per_class * support).sum() / support.sum()) if support.sum() else 0.0
    return F1Scores(per_class=per_class, macro=macro, weighted=weighted)


def _confusion_csv_text(cm: ConfusionMatrix) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([""] + list(cm.labels))
    for label, row in zip(cm.labels, cm.counts):
        writer.writerow([label] + [int(v) for v in row])
    return buf.getvalue()


def read_confusion_csv(path: str) -> ConfusionMatrix:
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    labels = rows[0][1:]
    counts = np.array([[int(v) for v in row[1:]] for row in rows[1:]], dtype=np.int64)
    return ConfusionMatrix(counts=counts, labels=tuple(labels))


def atomic_write_text(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-report-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def render_confusion_image(cm: ConfusionMatrix, cell_px: int = 16) -> np.ndarray:
    """Colormapped raster of the count grid; image size scales with k."""
    counts = cm.counts.astype(np.float64)
    peak = counts.max()
    norm = counts / peak if peak > 0 else counts
    lut = qscan.load_colormap()
    cells = lut[np.round(norm * 255).astype(int)]
    img = np.repeat(np.repeat(cells, cell_px, axis=0), cell_px, axis=1)
    return img.astype(np.float32)


def emit_report(
    cm: ConfusionMatrix,
    metrics: Mapping[str, Union[float, str]],
    out_dir: str,
) -> Dict[str, str]:
    """Write confusion.csv, metrics.txt (key=value lines), confusion.png.

    Returns the paths written, keyed by artifact name.
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "confusion_csv": os.path.join(out_dir, "confusion.csv"),
        "metrics": os.path.join(out_dir, "metrics.txt"),
        "confusion_png": os.path.join(out_dir, "confusion.png"),
    }
    atomic_write_text(paths["confusion_csv"], _confusion_csv_text(cm))
    lines = []
    for key, value in metrics.items():
        if isinstance(value, float):
            lines.append(f"{key}={value!r}")
        else:
            lines.append(f"{key}={value}")
    atomic_write_text(paths["metrics"], "\n".join(lines) + "\n")
    qscan.save_image(render_confusion_image(cm), paths["confusion_png"])
    return paths


def standard_metrics(cm: ConfusionMatrix) -> Dict[str, Union[float, str]]:
    """Accuracy, both F1 averages, and per-class accuracy, ready to emit."""
    scores = f1(cm)
    metrics: Dict[str, Union[float, str]] = {
        "accuracy": accuracy(cm),
        "f1_macro": scores.macro,
        "f1_weighted": scores.weighted,
    }
    pca = per_class_accuracy(cm)
    for label, value in zip(cm.labels, pca):
        metrics[f"acc_{label}"] = "undefined" if np.isnan(value) else float(value)
    return metrics
