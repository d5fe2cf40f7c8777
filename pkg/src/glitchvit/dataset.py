"""Manifest-driven dataset handling: ingestion, balancing, stratified splits.

The manifest is a UTF-8 CSV with header `path,label,split`; split is one
of train/val/test/unassigned. Class indices are assigned by sorted label
order everywhere.
"""

from __future__ import annotations

import csv
import os
import tempfile
from dataclasses import dataclass, replace
from typing import Dict, List, Sequence, Tuple

import numpy as np

from . import qscan
from .vit_model import ModelConfig

__all__ = [
    "SPLITS",
    "ManifestEntry",
    "DatasetManifest",
    "read_manifest",
    "write_manifest",
    "ingest_directory",
    "split_dataset",
    "balance_class",
    "load_entry_input",
    "load_batch",
]

SPLITS = ("train", "val", "test", "unassigned")
_IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp")


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: str
    split: str = "unassigned"

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(
                f"invalid split {self.split!r} for {self.path}; expected one of {SPLITS}"
            )


@dataclass(frozen=True)
class DatasetManifest:
    entries: Tuple[ManifestEntry, ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        seen = set()
        for e in self.entries:
            if e.path in seen:
                raise ValueError(f"duplicate path in manifest: {e.path}")
            seen.add(e.path)

    @property
    def class_list(self) -> List[str]:
        return sorted({e.label for e in self.entries})

    @property
    def label_to_index(self) -> Dict[str, int]:
        return {label: i for i, label in enumerate(self.class_list)}

    def entries_for_split(self, split: str) -> List[ManifestEntry]:
        if split not in SPLITS:
            raise ValueError(f"invalid split {split!r}; expected one of {SPLITS}")
        return [e for e in self.entries if e.split == split]

    def split_counts(self, label: str = None) -> Dict[str, int]:
        counts = {s: 0 for s in SPLITS}
        for e in self.entries:
            if label is None or e.label == label:
                counts[e.split] += 1
        return counts


def read_manifest(path: str) -> DatasetManifest:
    entries = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["path", "label", "split"]:
            raise ValueError(
                f"manifest {path} has header {header}, expected ['path', 'label', 'split']"
            )
        for row in reader:
            if not row:
                continue
            if len(row) != 3:
                raise ValueError(f"malformed manifest row in {path}: {row}")
            entries.append(ManifestEntry(*row))
    return DatasetManifest(entries=tuple(entries))


def write_manifest(manifest: DatasetManifest, path: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-manifest-", suffix=".csv")
    try:
        with os.fdopen(fd, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["path", "label", "split"])
            for e in manifest.entries:
                writer.writerow([e.path, e.label, e.split])
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def ingest_directory(root: str) -> DatasetManifest:
    """Build an unassigned manifest from a `<root>/<label>/<file>` tree."""
    if not os.path.isdir(root):
        raise OSError(f"dataset root is not a directory: {root}")
    entries = []
    for label in sorted(os.listdir(root)):
        label_dir = os.path.join(root, label)
        if not os.path.isdir(label_dir):
            continue
        for name in sorted(os.listdir(label_dir)):
            if name.lower().endswith(_IMAGE_EXTENSIONS):
                entries.append(
                    ManifestEntry(path=os.path.join(label_dir, name), label=label)
                )
    if not entries:
        raise ValueError(f"no image files found under {root}")
    return DatasetManifest(entries=tuple(entries))


def largest_remainder_counts(n: int, ratios: Sequence[float]) -> List[int]:
    """Integer partition of n by ratio with largest-remainder rounding.

    Ties on remainders go to the earlier ratio position (train > val > test).
    """
    if any(r <= 0 for r in ratios):
        raise ValueError(f"ratios must be positive, got {list(ratios)}")
    total = float(sum(ratios))
    quotas = [n * r / total for r in ratios]
    counts = [int(np.floor(q)) for q in quotas]
    leftover = n - sum(counts)
    order = sorted(range(len(ratios)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:leftover]:
        counts[i] += 1
    return counts


def split_dataset(
    manifest: DatasetManifest,
    ratios: Tuple[float, float, float] = (7.0, 1.5, 1.5),
    seed: int = 0,
) -> DatasetManifest:
    """Per-class stratified train/val/test split of the unassigned entries.

    Deterministic given the seed; entries already carrying a split tag are
    left untouched.
    """
    class_list = manifest.class_list
    assignment: Dict[str, str] = {}
    for class_idx, label in enumerate(class_list):
        pool = [
            e for e in manifest.entries if e.label == label and e.split == "unassigned"
        ]
        if not pool:
            if not any(e.label == label for e in manifest.entries):
                raise ValueError(f"empty class {label!r}")
            continue
        rng = np.random.default_rng([seed, class_idx])
        perm = rng.permutation(len(pool))
        n_train, n_val, n_test = largest_remainder_counts(len(pool), ratios)
        for pos, entry_idx in enumerate(perm):
            if pos < n_train:
                tag = "train"
            elif pos < n_train + n_val:
                tag = "val"
            else:
                tag = "test"
            assignment[pool[entry_idx].path] = tag
    new_entries = tuple(
        replace(e, split=assignment[e.path]) if e.path in assignment else e
        for e in manifest.entries
    )
    return DatasetManifest(entries=new_entries)


def balance_class(
    manifest: DatasetManifest, label: str, cap: int, seed: int = 0
) -> DatasetManifest:
    """Retain a seeded uniform subset of at most `cap` entries for `label`."""
    if cap < 1:
        raise ValueError(f"cap must be >= 1, got {cap}")
    if label not in manifest.class_list:
        raise ValueError(f"unknown label {label!r}")
    positions = [i for i, e in enumerate(manifest.entries) if e.label == label]
    if len(positions) <= cap:
        return manifest
    rng = np.random.default_rng(seed)
    keep = set(rng.choice(len(positions), size=cap, replace=False).tolist())
    drop = {positions[i] for i in range(len(positions)) if i not in keep}
    return DatasetManifest(
        entries=tuple(e for i, e in enumerate(manifest.entries) if i not in drop)
    )


def load_entry_input(entry: ManifestEntry, cfg: ModelConfig) -> np.ndarray:
    """Decode, resize, and normalize one manifest entry to model input planes."""
    img = qscan.load_image(entry.path, size=cfg.image_size)
    return qscan.image_to_input(img, cfg.norm_mean, cfg.norm_std)


def load_batch(
    manifest: DatasetManifest,
    split: str,
    indices: Sequence[int],
    cfg: ModelConfig,
) -> Tuple[np.ndarray, np.ndarray]:
    """Decoded, normalized inputs and integer labels for split-relative indices."""
    entries = manifest.entries_for_split(split)
    label_index = manifest.label_to_index
    n = len(entries)
    inputs = np.empty(
        (len(indices), cfg.channels, cfg.image_size, cfg.image_size), dtype=np.float32
    )
    labels = np.empty(len(indices), dtype=np.int64)
    for row, i in enumerate(indices):
        if not 0 <= i < n:
            raise IndexError(f"index {i} out of range for split {split!r} of size {n}")
        entry = entries[i]
        inputs[row] = load_entry_input(entry, cfg)
        labels[row] = label_index[entry.label]
    return inputs, labels
