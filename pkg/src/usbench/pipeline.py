"""RF ultrasound preprocessing.

Two network input modalities are produced from raw multi-channel RF frames:

``AModeUS``
    time-gain compensation -> FIR bandpass -> envelope -> log compression
``EnvelopeRF``
    envelope of the raw RF trace, nothing else

In both cases ``trim`` samples are dropped from each end of every trace and
the channels are stacked row-wise into a ``C x L`` matrix.

All functions operate on the last axis, so a single call can process one
trace, a ``(channels, samples)`` frame or a full ``(channels, frames,
samples)`` block.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .errors import ConfigError, DegenerateInputError

GUARD_SAMPLES = 16


class Modality(str, enum.Enum):
    AMODE_US = "AModeUS"
    ENVELOPE_RF = "EnvelopeRF"

    @classmethod
    def parse(cls, value) -> "Modality":
        if isinstance(value, cls):
            return value
        for m in cls:
            if str(value).lower() in (m.value.lower(), m.name.lower()):
                return m
        raise ConfigError(f"unknown modality {value!r}; expected one of {[m.value for m in cls]}")


@dataclass
class RFRecording:
    """Raw RF frames of one session.

    ``samples`` has shape ``(channels, frames, samples_per_frame)``.
    """

    samples: np.ndarray
    sampling_rate_hz: float
    center_frequency_hz: float
    labels: np.ndarray
    session_id: str = "session0"
    subject_id: str = "subject0"
    gestures: Sequence[str] = ()

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        problems = self.problems()
        if problems:
            raise ConfigError(f"invalid recording {self.subject_id}/{self.session_id}: " + "; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        if self.samples.ndim != 3:
            return [f"samples must be 3-D (channels, frames, samples), got shape {self.samples.shape}"]
        c, f, n = self.samples.shape
        if c < 1:
            out.append("at least one channel required")
        if n < 8:
            out.append(f"samples_per_frame={n} < 8")
        if not self.sampling_rate_hz > 2 * self.center_frequency_hz > 0:
            out.append(
                f"sampling_rate_hz={self.sampling_rate_hz} must exceed twice "
                f"center_frequency_hz={self.center_frequency_hz}"
            )
        if self.labels.shape != (f,):
            out.append(f"{self.labels.size} labels for {f} frames")
        elif f and self.gestures and (self.labels.min() < 0 or self.labels.max() >= len(self.gestures)):
            out.append(f"labels outside the gesture set of size {len(self.gestures)}")
        return out

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def frames(self) -> int:
        return self.samples.shape[1]

    @property
    def samples_per_frame(self) -> int:
        return self.samples.shape[2]


@dataclass
class BandpassSpec:
    low_hz: float
    high_hz: float
    filter_order: int = 64

    @classmethod
    def around(cls, center_hz: float, order: int = 64) -> "BandpassSpec":
        return cls(0.5 * center_hz, 1.5 * center_hz, order)


@dataclass
class PreprocConfig:
    """Preprocessing parameters.

    ``tgc_curve`` takes precedence over ``tgc_alpha``; with neither set the
    gain is unity. ``bandpass=None`` selects ``[0.5 f_c, 1.5 f_c]``, order 64.
    """

    modality: Modality = Modality.AMODE_US
    tgc_curve: Optional[np.ndarray] = None
    tgc_alpha: Optional[float] = None
    bandpass: Optional[BandpassSpec] = None
    dynamic_range_db: float = 60.0
    trim: int = 2

    def __post_init__(self):
        self.modality = Modality.parse(self.modality)
        if isinstance(self.bandpass, dict):
            self.bandpass = BandpassSpec(**self.bandpass)
        if self.tgc_curve is not None:
            self.tgc_curve = np.asarray(self.tgc_curve, dtype=np.float64)

    def problems(self, rec: Optional[RFRecording] = None) -> list[str]:
        out = []
        if not self.dynamic_range_db > 0:
            out.append(f"dynamic_range_db must be > 0, got {self.dynamic_range_db}")
        if int(self.trim) != self.trim or self.trim < 0:
            out.append(f"trim must be a non-negative integer, got {self.trim}")
        if self.tgc_curve is not None and np.any(self.tgc_curve <= 0):
            out.append("tgc_curve entries must be > 0")
        if rec is not None:
            n = rec.samples_per_frame
            if n - 2 * self.trim < 1:
                out.append(f"trim={self.trim} leaves no samples out of {n}")
            if self.tgc_curve is not None and self.tgc_curve.shape != (n,):
                out.append(f"tgc_curve length {self.tgc_curve.size} != samples_per_frame {n}")
            bp = self.band_for(rec.center_frequency_hz)
            fs = rec.sampling_rate_hz
            if not 0 < bp.low_hz < bp.high_hz < fs / 2:
                out.append(f"bandpass [{bp.low_hz}, {bp.high_hz}] Hz not inside (0, {fs / 2}) Hz")
        return out

    def band_for(self, center_hz: float) -> BandpassSpec:
        return self.bandpass if self.bandpass is not None else BandpassSpec.around(center_hz)

    def gain_curve(self, n: int) -> np.ndarray:
        if self.tgc_curve is not None:
            return self.tgc_curve
        if self.tgc_alpha is not None:
            return exponential_tgc(n, self.tgc_alpha)
        return np.ones(n)


@dataclass(frozen=True)
class NetworkInput:
    data: np.ndarray
    modality: Modality
    label: int
    provenance: tuple = field(default=("", "", -1))


def exponential_tgc(n: int, alpha: float) -> np.ndarray:
    """Gain curve ``g[i] = exp(alpha * i)``."""
    return np.exp(alpha * np.arange(n, dtype=np.float64))


def apply_tgc(frame, curve) -> np.ndarray:
    """Multiply every trace in ``frame`` sample-wise by ``curve``."""
    frame = np.asarray(frame, dtype=np.float64)
    curve = np.asarray(curve, dtype=np.float64)
    if curve.ndim != 1 or curve.shape[0] != frame.shape[-1]:
        raise ConfigError(f"TGC curve length {curve.size} does not match frame length {frame.shape[-1]}")
    if np.any(curve <= 0):
        raise ConfigError("TGC curve entries must be > 0")
    return frame * curve


def fir_bandpass_taps(low_hz: float, high_hz: float, fs: float, order: int = 64) -> np.ndarray:
    """Hamming-windowed sinc bandpass with ``order + 1`` taps.

    The taps are scaled for unit gain at the band centre.
    """
    if not 0 < low_hz < high_hz < fs / 2:
        raise ConfigError(f"bandpass cutoffs ({low_hz}, {high_hz}) Hz must satisfy 0 < low < high < fs/2 = {fs / 2}")
    if order < 2 or order % 2:
        raise ConfigError(f"filter_order must be a positive even integer, got {order}")
    m = np.arange(order + 1) - order / 2
    lo, hi = low_hz / fs, high_hz / fs
    taps = 2 * hi * np.sinc(2 * hi * m) - 2 * lo * np.sinc(2 * lo * m)
    taps *= np.hamming(order + 1)
    centre = 0.5 * (lo + hi)
    gain = np.abs(np.sum(taps * np.exp(-2j * np.pi * centre * m)))
    return taps / gain


def bandpass(frame, cfg: BandpassSpec, fs: float) -> np.ndarray:
    """Zero-phase FIR bandpass along the last axis (same length out)."""
    taps = fir_bandpass_taps(cfg.low_hz, cfg.high_hz, fs, cfg.filter_order)
    frame = np.asarray(frame, dtype=np.float64)
    # odd, symmetric taps centred on the output sample -> group delay removed
    return ndimage.convolve1d(frame, taps, axis=-1, mode="constant", cval=0.0)


def analytic_signal(frame) -> np.ndarray:
    """Analytic signal via the one-sided spectrum, along the last axis."""
    x = np.asarray(frame, dtype=np.float64)
    n = x.shape[-1]
    if n < 2:
        raise ConfigError(f"analytic signal needs at least 2 samples, got {n}")
    h = np.zeros(n)
    h[0] = 1.0
    if n % 2 == 0:
        h[1 : n // 2] = 2.0
        h[n // 2] = 1.0
    else:
        h[1 : (n + 1) // 2] = 2.0
    return np.fft.ifft(np.fft.fft(x, axis=-1) * h, axis=-1)


def envelope(frame) -> np.ndarray:
    """Magnitude of the analytic signal."""
    return np.abs(analytic_signal(frame))


def log_compress(env, dynamic_range_db: float = 60.0) -> np.ndarray:
    """Map each trace to ``[0, 1]`` on a decibel scale.

    Every trace is normalised by its own maximum, converted to dB and
    clipped at ``-dynamic_range_db``; the floor maps to 0 and the peak to 1.
    """
    env = np.asarray(env, dtype=np.float64)
    if not dynamic_range_db > 0:
        raise ConfigError(f"dynamic_range_db must be > 0, got {dynamic_range_db}")
    peak = env.max(axis=-1, keepdims=True)
    if np.any(peak <= 0):
        bad = np.argwhere(peak[..., 0] <= 0) if env.ndim > 1 else []
        where = f" at index {tuple(bad[0])}" if len(bad) else ""
        raise DegenerateInputError(f"envelope has no positive sample{where}; cannot normalise")
    with np.errstate(divide="ignore"):
        db = 20.0 * np.log10(env / peak)
    db = np.maximum(db, -dynamic_range_db)
    return 1.0 + db / dynamic_range_db


def _annotate(exc: Exception, rec: RFRecording, block: np.ndarray) -> Exception:
    # block is (channels, frames, n); find the first all-zero trace for the message
    dead = np.argwhere(np.max(np.abs(block), axis=-1) == 0)
    if len(dead):
        ch, fr = dead[0]
        msg = f"{rec.subject_id}/{rec.session_id} channel {ch} frame {fr}: {exc}"
    else:
        msg = f"{rec.subject_id}/{rec.session_id}: {exc}"
    return type(exc)(msg)


def preprocess_block(rec: RFRecording, cfg: PreprocConfig) -> np.ndarray:
    """Process a whole recording into a ``(frames, C, L)`` float64 array."""
    problems = cfg.problems(rec)
    if problems:
        raise ConfigError("; ".join(problems))
    raw = np.asarray(rec.samples, dtype=np.float64)
    if cfg.modality is Modality.AMODE_US:
        x = apply_tgc(raw, cfg.gain_curve(rec.samples_per_frame))
        x = bandpass(x, cfg.band_for(rec.center_frequency_hz), rec.sampling_rate_hz)
        x = envelope(x)
        try:
            x = log_compress(x, cfg.dynamic_range_db)
        except DegenerateInputError as exc:
            raise _annotate(exc, rec, x) from exc
    else:
        x = envelope(raw)
    t = int(cfg.trim)
    if t:
        x = x[..., t:-t]
    return np.ascontiguousarray(np.transpose(x, (1, 0, 2)))


def preprocess(rec: RFRecording, cfg: PreprocConfig) -> list[NetworkInput]:
    """Convert every frame of ``rec`` into a :class:`NetworkInput`."""
    block = preprocess_block(rec, cfg)
    return [
        NetworkInput(block[i], cfg.modality, int(rec.labels[i]), (rec.subject_id, rec.session_id, i))
        for i in range(block.shape[0])
    ]
