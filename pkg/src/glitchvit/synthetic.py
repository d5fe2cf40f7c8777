"""Synthetic strain segments and toy image datasets.

Stands in for detector archives: injects chirp / blip / tone transients
into unit white noise so the full whiten -> Q-scan -> render -> train
pipeline can run end to end at desk scale. Per-sample morphology is
jittered from a seeded generator, so datasets are reproducible.
"""

from __future__ import annotations

import os
import zlib
from concurrent.futures import ThreadPoolExecutor
from typing import Optional, Sequence, Tuple

import numpy as np

from . import qscan
from .dataset import DatasetManifest, ManifestEntry, write_manifest
from .qscan import StrainSeries

__all__ = ["TOY_CLASSES", "synth_strain", "make_toy_dataset"]

TOY_CLASSES = ("blip", "chirp", "noise", "tone")


def _chirp(t: np.ndarray, t_event: float, f0: float, f1: float, width: float) -> np.ndarray:
    """Linear frequency sweep f0 -> f1 across [t_event - width/2, t_event + width/2]."""
    tau = (t - (t_event - width / 2)) / width
    mask = (tau >= 0) & (tau <= 1)
    inst_phase = 2 * np.pi * width * (f0 * tau + 0.5 * (f1 - f0) * tau**2)
    return np.where(mask, np.sin(inst_phase), 0.0)


def _blip(t: np.ndarray, t_event: float, f: float, sigma: float) -> np.ndarray:
    env = np.exp(-0.5 * ((t - t_event) / sigma) ** 2)
    return env * np.sin(2 * np.pi * f * (t - t_event))


def _tone(t: np.ndarray, t_event: float, f: float, width: float) -> np.ndarray:
    # smooth-edged boxcar so the tone is transient, not a persistent line
    edge = width / 8
    rise = 0.5 * (1 + np.tanh((t - (t_event - width / 2)) / edge))
    fall = 0.5 * (1 + np.tanh(((t_event + width / 2) - t) / edge))
    return rise * fall * np.sin(2 * np.pi * f * t)


def synth_strain(
    kind: str,
    seed: int,
    sample_rate: float = 1024.0,
    duration: float = 6.0,
    t0: float = 1000000000.0,
) -> Tuple[StrainSeries, float]:
    """One synthetic strain segment of the given morphology.

    Returns (series, event_gps). The event sits at the segment center;
    amplitudes and frequencies are jittered per seed.
    """
    if kind not in TOY_CLASSES:
        raise ValueError(f"unknown morphology {kind!r}; expected one of {TOY_CLASSES}")
    rng = np.random.default_rng([zlib.crc32(kind.encode("utf-8")), seed])
    n = int(round(sample_rate * duration))
    t = np.arange(n) / sample_rate
    t_event = duration / 2 + rng.uniform(-0.05, 0.05)
    x = rng.standard_normal(n)

    amp = rng.uniform(8.0, 14.0)
    if kind == "chirp":
        f0 = rng.uniform(20.0, 35.0)
        f1 = rng.uniform(180.0, 260.0)
        x += amp * _chirp(t, t_event, f0, f1, width=rng.uniform(0.6, 0.9))
    elif kind == "blip":
        f = rng.uniform(140.0, 220.0)
        x += amp * _blip(t, t_event, f, sigma=rng.uniform(0.02, 0.05))
    elif kind == "tone":
        f = rng.uniform(45.0, 75.0)
        x += amp * _tone(t, t_event, f, width=rng.uniform(1.2, 1.6))
    # "noise": background only
    return StrainSeries(samples=x, sample_rate=sample_rate, t0=t0), t0 + t_event


def render_segment(
    series: StrainSeries,
    event_gps: float,
    q: float = 12.0,
    f_min: float = 10.0,
    f_max: float = 400.0,
    crop_half_width: float = 0.5,
) -> np.ndarray:
    """Whiten, Q-scan, and render one segment to a glitch image."""
    white = qscan.whiten(series)
    spec = qscan.q_transform(white, q=q, f_min=f_min, f_max=f_max)
    return qscan.render(spec, crop_half_width=crop_half_width, event_time=event_gps)


def make_toy_dataset(
    root: str,
    per_class: int = 200,
    seed: int = 0,
    classes: Sequence[str] = TOY_CLASSES,
    threads: Optional[int] = None,
    manifest_path: Optional[str] = None,
) -> DatasetManifest:
    """Render `per_class` images per morphology under `<root>/<label>/` and
    return (and optionally write) the unassigned manifest."""
    jobs = []
    for label in classes:
        os.makedirs(os.path.join(root, label), exist_ok=True)
        for i in range(per_class):
            path = os.path.join(root, label, f"{label}_{i:04d}.png")
            jobs.append((label, i, path))

    def build(job):
        label, i, path = job
        series, event_gps = synth_strain(label, seed=seed * 1_000_003 + i)
        qscan.save_image(render_segment(series, event_gps), path)
        return ManifestEntry(path=path, label=label)

    if threads is not None and threads <= 1:
        entries = [build(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            entries = list(pool.map(build, jobs))
    manifest = DatasetManifest(entries=tuple(entries))
    if manifest_path is not None:
        write_manifest(manifest, manifest_path)
    return manifest
