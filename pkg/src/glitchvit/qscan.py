"""Strain segments to rendered glitch images.

Pipeline: load a strain time series, whiten it against its own median
power spectral density, run a fixed-Q Gaussian-window transform over a
log-spaced frequency grid, then crop around the event time and render
through a perceptual colormap to a 224x224 RGB image.

The transform computes, per frequency bin f,

    energy(tau, f) = |sum_t s(t) w(t - tau; f, q) exp(-2 pi i f t)|^2

with a Gaussian window of frequency-domain bandwidth sigma_f = f / q,
evaluated via the FFT (window applied as a Gaussian in the frequency
domain) and normalized so whitened white noise has mean energy ~ 1.
"""

from __future__ import annotations

import math
import os
import struct
import tempfile
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Optional, Sequence, Tuple

import numpy as np
from PIL import Image

__all__ = [
    "StrainSeries",
    "Spectrogram",
    "IMAGE_SIZE",
    "STRAIN_MAGIC",
    "load_strain",
    "save_strain",
    "whiten",
    "q_transform",
    "render",
    "image_to_input",
    "bilinear_resize",
    "load_colormap",
    "save_image",
    "load_image",
]

IMAGE_SIZE = 224
STRAIN_MAGIC = b"GWST"
_STRAIN_VERSION = 1

# Defaults mirror the trigger band the source catalogs use.
DEFAULT_Q = 12.0
DEFAULT_F_MIN = 10.0
DEFAULT_F_MAX = 2048.0
DEFAULT_BINS = 224


@dataclass(frozen=True)
class StrainSeries:
    """Uniformly sampled detector strain with GPS epoch."""

    samples: np.ndarray
    sample_rate: float
    t0: float = 0.0

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        object.__setattr__(self, "samples", samples)
        if not self.sample_rate > 0:
            raise ValueError(f"sample_rate must be > 0, got {self.sample_rate}")
        if samples.size == 0:
            raise ValueError("strain series must be non-empty")
        bad = np.flatnonzero(~np.isfinite(samples))
        if bad.size:
            raise ValueError(f"non-finite strain sample at index {bad[0]}")

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.samples.size) / self.sample_rate


@dataclass(frozen=True)
class Spectrogram:
    """Constant-Q energy grid, rows = time, columns = frequency."""

    energy: np.ndarray
    times: np.ndarray  # GPS seconds of each row center
    freqs: np.ndarray  # Hz, log-spaced, strictly increasing
    q: float

    def __post_init__(self):
        if self.energy.shape != (self.times.size, self.freqs.size):
            raise ValueError(
                f"energy grid {self.energy.shape} inconsistent with "
                f"{self.times.size} times x {self.freqs.size} freqs"
            )


def save_strain(series: StrainSeries, path: str) -> None:
    """Write the bit-exact binary strain format (header + f64 samples)."""
    header = STRAIN_MAGIC + struct.pack(
        "<IddQ",
        _STRAIN_VERSION,
        series.sample_rate,
        series.t0,
        series.samples.size,
    )
    payload = header + series.samples.astype("<f8").tobytes()
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-strain-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_strain(path: str) -> StrainSeries:
    """Read a strain file, rejecting malformed headers and non-finite data."""
    with open(path, "rb") as f:
        raw = f.read()
    header_size = 4 + 4 + 8 + 8 + 8
    if len(raw) < header_size:
        raise ValueError(f"strain file too short for header: {path}")
    if raw[:4] != STRAIN_MAGIC:
        raise ValueError(f"bad strain magic in {path}: {raw[:4]!r}")
    version, sample_rate, t0, n = struct.unpack("<IddQ", raw[4:header_size])
    if version != _STRAIN_VERSION:
        raise ValueError(f"unsupported strain format version {version}")
    expected = header_size + 8 * n
    if len(raw) != expected:
        raise ValueError(
            f"strain file length {len(raw)} disagrees with declared "
            f"{n} samples (expected {expected} bytes)"
        )
    samples = np.frombuffer(raw[header_size:], dtype="<f8")
    return StrainSeries(samples=samples, sample_rate=sample_rate, t0=t0)


def _median_psd(x: np.ndarray, fs: float, seg_len: int) -> Tuple[np.ndarray, np.ndarray]:
    """One-sided median-averaged PSD over Hann-windowed segments, 50% overlap.

    The median of periodograms is corrected by ln 2 (chi^2_2 median bias)
    so the estimate is unbiased for stationary noise.
    """
    window = np.hanning(seg_len)
    wnorm = fs * np.sum(window**2)
    starts = range(0, x.size - seg_len + 1, max(seg_len // 2, 1))
    periodograms = []
    for s in starts:
        seg = x[s : s + seg_len] * window
        periodograms.append((np.abs(np.fft.rfft(seg)) ** 2) * (2.0 / wnorm))
    psd = np.median(np.asarray(periodograms), axis=0) / math.log(2.0)
    freqs = np.fft.rfftfreq(seg_len, 1.0 / fs)
    return freqs, psd


def whiten(series: StrainSeries, segment_length: float = 1.0) -> StrainSeries:
    """Flatten the spectrum by dividing out the estimated amplitude spectral
    density; unit-variance white noise maps to roughly unit-variance output.
    """
    fs = series.sample_rate
    seg_len = int(round(segment_length * fs))
    if series.samples.size < 2 * seg_len:
        raise ValueError(
            f"series too short to whiten: duration {series.duration:.6g} s, "
            f"need at least {2 * segment_length:.6g} s"
        )
    x = series.samples
    psd_freqs, psd = _median_psd(x, fs, seg_len)

    spectrum = np.fft.fft(x)
    nu = np.abs(np.fft.fftfreq(x.size, 1.0 / fs))
    asd = np.sqrt(np.interp(nu, psd_freqs, psd) * fs / 2.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        white = np.where(asd > 0, spectrum / asd, 0.0)
    white[0] = 0.0  # remove DC
    out = np.fft.ifft(white).real
    return StrainSeries(samples=out, sample_rate=fs, t0=series.t0)


def q_transform(
    series: StrainSeries,
    q: float = DEFAULT_Q,
    f_min: float = DEFAULT_F_MIN,
    f_max: float = DEFAULT_F_MAX,
    time_bins: int = DEFAULT_BINS,
    freq_bins: int = DEFAULT_BINS,
) -> Spectrogram:
    """Fixed-Q Gaussian-window energy spectrogram on a log frequency grid."""
    fs = series.sample_rate
    if q < 3:
        raise ValueError(f"q must be >= 3 (window degenerates), got {q}")
    if not (0 < f_min < f_max):
        raise ValueError(f"need 0 < f_min < f_max, got [{f_min}, {f_max}]")
    if f_max > fs / 2:
        raise ValueError(
            f"f_max {f_max} Hz exceeds Nyquist {fs / 2} Hz at {fs} Hz sampling"
        )
    if time_bins < 1 or freq_bins < 1:
        raise ValueError("time_bins and freq_bins must be >= 1")

    x = series.samples
    n = x.size
    spectrum = np.fft.fft(x)
    nu = np.fft.fftfreq(n, 1.0 / fs)
    freqs = np.geomspace(f_min, f_max, freq_bins)

    # Uniform time-bin centers; energy evaluated at the nearest sample.
    centers = (np.arange(time_bins) + 0.5) * (n / time_bins)
    idx = np.clip(np.round(centers - 0.5).astype(int), 0, n - 1)
    times = series.t0 + centers / fs

    energy = np.empty((time_bins, freq_bins), dtype=np.float64)
    windowed = np.zeros(n, dtype=np.complex128)
    for j, f in enumerate(freqs):
        sigma = f / q
        # Gaussian support is effectively +-8 sigma; bins outside stay zero.
        lo = max(int(np.ceil((f - 8 * sigma) * n / fs)), 0)
        hi = min(int(np.floor((f + 8 * sigma) * n / fs)) + 1, n // 2 + 1)
        g = np.exp(-0.5 * ((nu[lo:hi] - f) / sigma) ** 2)
        norm = np.sum(g * g) / n
        windowed[lo:hi] = spectrum[lo:hi] * g
        coeff = np.fft.ifft(windowed)
        windowed[lo:hi] = 0.0
        energy[:, j] = np.abs(coeff[idx]) ** 2 / norm
    return Spectrogram(energy=energy, times=times, freqs=freqs, q=float(q))


@lru_cache(maxsize=1)
def load_colormap() -> np.ndarray:
    """256-entry perceptual RGB lookup table shipped with the package."""
    text = resources.files("glitchvit.data").joinpath("colormap256.csv").read_text()
    rows = [
        [float(v) for v in line.split(",")]
        for line in text.splitlines()
        if line and not line.startswith("#")
    ]
    lut = np.asarray(rows, dtype=np.float64)
    if lut.shape != (256, 3):
        raise ValueError(f"colormap table has shape {lut.shape}, expected (256, 3)")
    return lut


def bilinear_resize(src: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resampling with half-pixel centers; works on (H,W) or (H,W,C)."""
    src = np.asarray(src, dtype=np.float64)
    h, w = src.shape[:2]
    ys = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0, h - 1)
    xs = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    if src.ndim == 3:
        wy = wy[..., None]
        wx = wx[..., None]
    a = src[np.ix_(y0, x0)]
    b = src[np.ix_(y0, x1)]
    c = src[np.ix_(y1, x0)]
    d = src[np.ix_(y1, x1)]
    return a * (1 - wy) * (1 - wx) + b * (1 - wy) * wx + c * wy * (1 - wx) + d * wy * wx


def render(
    spectrogram: Spectrogram,
    crop_half_width: float,
    event_time: float,
    intensity_percentile: float = 99.5,
) -> np.ndarray:
    """Crop around the event and render to a 224x224x3 image in [0, 1].

    Intensity is linear in energy, clipped at the given percentile of the
    cropped grid (falling back to the grid maximum when the percentile is
    zero, so a lone bright cell still renders). Low frequencies sit at the
    bottom of the image, time runs left to right.
    """
    lo, hi = event_time - crop_half_width, event_time + crop_half_width
    t_start, t_end = spectrogram.times[0], spectrogram.times[-1]
    if lo < t_start or hi > t_end:
        raise ValueError(
            f"crop window [{lo:.6f}, {hi:.6f}] outside spectrogram span "
            f"[{t_start:.6f}, {t_end:.6f}]"
        )
    mask = (spectrogram.times >= lo) & (spectrogram.times <= hi)
    cropped = spectrogram.energy[mask, :]
    if cropped.shape[0] < 2:
        raise ValueError(
            f"crop window [{lo:.6f}, {hi:.6f}] covers fewer than two time bins"
        )

    ceiling = float(np.percentile(cropped, intensity_percentile))
    if ceiling <= 0:
        ceiling = float(cropped.max())
    if ceiling <= 0:
        intensity = np.zeros((IMAGE_SIZE, IMAGE_SIZE))
    else:
        norm = np.clip(cropped / ceiling, 0.0, 1.0)
        # rows = frequency descending (image top = highest frequency)
        intensity = bilinear_resize(np.flipud(norm.T), IMAGE_SIZE, IMAGE_SIZE)
        intensity = np.clip(intensity, 0.0, 1.0)
    lut = load_colormap()
    img = lut[np.round(intensity * 255).astype(int)]
    return img.astype(np.float32)


def image_to_input(
    img: np.ndarray, mean: Sequence[float], std: Sequence[float]
) -> np.ndarray:
    """Per-channel (value - mean) / std; returns channel-first planes."""
    img = np.asarray(img, dtype=np.float32)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got shape {img.shape}")
    mean = np.asarray(mean, dtype=np.float32).reshape(3)
    std = np.asarray(std, dtype=np.float32).reshape(3)
    if np.any(std <= 0):
        raise ValueError(f"std components must be > 0, got {std.tolist()}")
    out = (img - mean) / std
    return np.ascontiguousarray(out.transpose(2, 0, 1))


def save_image(img: np.ndarray, path: str) -> None:
    """Write an (H, W, 3) float image in [0, 1] as 8-bit PNG, atomically."""
    arr = np.asarray(img)
    data = np.round(np.clip(arr, 0.0, 1.0) * 255).astype(np.uint8)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-img-", suffix=".png")
    os.close(fd)
    try:
        Image.fromarray(data, mode="RGB").save(tmp, format="PNG")
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_image(path: str, size: Optional[int] = None) -> np.ndarray:
    """Decode an 8-bit RGB raster to floats in [0, 1], optionally resized."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    if size is not None and arr.shape[:2] != (size, size):
        arr = bilinear_resize(arr, size, size).astype(np.float32)
    return arr
