"""Recording ingestion, synthetic RF generation and intra-session splits.

On-disk layout, one directory per session::

    <root>/<subject_id>/<session_id>/
        metadata.json   channels, frames, samples_per_frame, sampling_rate_hz,
                        center_frequency_hz, label_map
        rf.f32          little-endian float32, frame-major, then channel, then sample
        labels.txt      one integer class id per frame

Preprocessed inputs use the same convention (``inputs.f32`` holding
``frames x C x L`` values) with a ``modality`` entry in the metadata.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .pipeline import Modality, RFRecording
from .rng import make_rng

GESTURES = ("RS", "PG", "FP", "IP", "TG", "KG")
META_FILE, RF_FILE, LABEL_FILE = "metadata.json", "rf.f32", "labels.txt"
INPUT_FILE = "inputs.f32"


# --- ingestion -----------------------------------------------------------------


def save_recording(rec: RFRecording, root) -> Path:
    d = Path(root) / rec.subject_id / rec.session_id
    d.mkdir(parents=True, exist_ok=True)
    meta = {
        "subject_id": rec.subject_id,
        "session_id": rec.session_id,
        "channels": rec.channels,
        "frames": rec.frames,
        "samples_per_frame": rec.samples_per_frame,
        "sampling_rate_hz": rec.sampling_rate_hz,
        "center_frequency_hz": rec.center_frequency_hz,
        "label_map": {str(i): g for i, g in enumerate(rec.gestures)},
        "dtype": "<f4",
        "layout": "frame,channel,sample",
    }
    (d / META_FILE).write_text(json.dumps(meta, indent=2) + "\n")
    frame_major = np.ascontiguousarray(np.transpose(rec.samples, (1, 0, 2)), dtype="<f4")
    (d / RF_FILE).write_bytes(frame_major.tobytes())
    (d / LABEL_FILE).write_text("".join(f"{int(v)}\n" for v in rec.labels))
    return d


def load_recording(session_dir) -> RFRecording:
    d = Path(session_dir)
    name = f"{d.parent.name}/{d.name}"
    meta_path = d / META_FILE
    if not meta_path.is_file():
        raise DataError(f"{name}: missing {META_FILE}")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{name}: {META_FILE} is not valid JSON at byte {exc.pos}") from None
    missing = [k for k in ("channels", "samples_per_frame", "sampling_rate_hz", "center_frequency_hz")
               if k not in meta]
    if missing:
        raise DataError(f"{name}: {META_FILE} missing keys {missing}")
    c, n = int(meta["channels"]), int(meta["samples_per_frame"])
    rf_path = d / RF_FILE
    if not rf_path.is_file():
        raise DataError(f"{name}: missing {RF_FILE}")
    raw = rf_path.read_bytes()
    per_frame = 4 * c * n
    if len(raw) % per_frame:
        whole = len(raw) // per_frame
        raise DataError(f"{name}: {RF_FILE} has a partial frame starting at byte offset {whole * per_frame}")
    frames = len(raw) // per_frame
    if "frames" in meta and int(meta["frames"]) != frames:
        raise DataError(f"{name}: {META_FILE} declares {meta['frames']} frames, {RF_FILE} holds {frames}")
    data = np.frombuffer(raw, dtype="<f4").reshape(frames, c, n)
    bad = np.flatnonzero(~np.isfinite(data.reshape(-1)))
    if bad.size:
        raise DataError(f"{name}: non-finite sample in {RF_FILE} at byte offset {4 * int(bad[0])}")
    label_path = d / LABEL_FILE
    if not label_path.is_file():
        raise DataError(f"{name}: missing {LABEL_FILE}")
    lines = label_path.read_text().split()
    if len(lines) != frames:
        raise DataError(f"{name}: {LABEL_FILE} has {len(lines)} labels for {frames} frames")
    try:
        labels = np.array([int(v) for v in lines], dtype=np.int64)
    except ValueError as exc:
        raise DataError(f"{name}: {LABEL_FILE}: {exc}") from None
    label_map = meta.get("label_map", {})
    gestures = tuple(label_map[k] for k in sorted(label_map, key=int)) if label_map else ()
    try:
        return RFRecording(
            samples=np.ascontiguousarray(np.transpose(data, (1, 0, 2)), dtype=np.float32),
            sampling_rate_hz=float(meta["sampling_rate_hz"]),
            center_frequency_hz=float(meta["center_frequency_hz"]),
            labels=labels,
            session_id=str(meta.get("session_id", d.name)),
            subject_id=str(meta.get("subject_id", d.parent.name)),
            gestures=gestures,
        )
    except ConfigError as exc:
        raise DataError(f"{name}: {exc}") from None


def list_sessions(root) -> list[Path]:
    root = Path(root)
    return sorted(p.parent for p in root.glob(f"*/*/{META_FILE}"))


def load_dataset(root) -> list[RFRecording]:
    """Every session under ``root`` sorted by (subject, session).

    All malformed sessions are reported together in one :class:`DataError`.
    """
    dirs = list_sessions(root)
    if not dirs:
        raise DataError(f"{root}: no <subject>/<session>/{META_FILE} found")
    recs, problems = [], []
    for d in dirs:
        try:
            recs.append(load_recording(d))
        except DataError as exc:
            problems.append(str(exc))
    if problems:
        raise DataError("malformed sessions:\n  " + "\n  ".join(problems))
    return recs


def save_network_inputs(block: np.ndarray, labels, modality: Modality, out_dir, subject_id="", session_id=""):
    """Write a ``(frames, C, L)`` block of preprocessed inputs."""
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    meta = {
        "subject_id": subject_id,
        "session_id": session_id,
        "modality": Modality.parse(modality).value,
        "frames": int(block.shape[0]),
        "channels": int(block.shape[1]),
        "length": int(block.shape[2]),
        "dtype": "<f4",
        "layout": "frame,channel,sample",
    }
    (d / META_FILE).write_text(json.dumps(meta, indent=2) + "\n")
    (d / INPUT_FILE).write_bytes(np.ascontiguousarray(block, dtype="<f4").tobytes())
    (d / LABEL_FILE).write_text("".join(f"{int(v)}\n" for v in labels))


def load_network_inputs(in_dir):
    """Returns ``(block, labels, metadata)``."""
    d = Path(in_dir)
    meta = json.loads((d / META_FILE).read_text())
    shape = (meta["frames"], meta["channels"], meta["length"])
    block = np.frombuffer((d / INPUT_FILE).read_bytes(), dtype="<f4").reshape(shape).astype(np.float64)
    labels = np.array([int(v) for v in (d / LABEL_FILE).read_text().split()], dtype=np.int64)
    return block, labels, meta


# --- synthetic data ------------------------------------------------------------


@dataclass
class SynthConfig:
    """Desk-scale stand-in for a multi-transducer forearm recording.

    Each class owns a pattern of reflector depths (in samples) and amplitudes
    per channel. Frames of one class are recorded back to back, classes in
    sequence; a sinusoidal wrist rotation shifts every reflector over time.
    """

    channels: int = 8
    samples_per_frame: int = 964
    sampling_rate_hz: float = 20e6
    center_frequency_hz: float = 5e6
    classes: int = 6
    frames_per_class: int = 60
    frame_rate_hz: float = 10.0
    reflectors_per_channel: int = 3
    reflector_depths: Optional[np.ndarray] = None  # (classes, channels, R) in samples
    reflector_amplitudes: Optional[np.ndarray] = None
    wrist_rotation_hz: float = 0.5
    rotation_shift_samples: float = 6.0
    pulse_cycles: float = 2.0
    attenuation_per_sample: float = 0.001
    amplitude_jitter: float = 0.1
    noise_std: float = 0.05
    seed: int = 0
    subject_id: str = "synth"
    session_id: str = "session0"

    def problems(self) -> list[str]:
        out = []
        if self.channels < 1 or self.classes < 1 or self.frames_per_class < 1:
            out.append("channels, classes and frames_per_class must be positive")
        if self.samples_per_frame < 8:
            out.append(f"samples_per_frame={self.samples_per_frame} < 8")
        if not self.sampling_rate_hz > 2 * self.center_frequency_hz > 0:
            out.append("sampling_rate_hz must exceed twice center_frequency_hz")
        if self.noise_std < 0:
            out.append(f"noise_std must be >= 0, got {self.noise_std}")
        if self.reflector_depths is not None:
            d = np.asarray(self.reflector_depths, dtype=np.float64)
            if d.ndim != 3 or d.shape[:2] != (self.classes, self.channels):
                out.append(f"reflector_depths must have shape (classes, channels, R), got {d.shape}")
            else:
                reach = self.rotation_shift_samples
                if np.any(d - reach < 0) or np.any(d + reach > self.samples_per_frame - 1):
                    out.append(
                        f"reflector delay outside the frame of {self.samples_per_frame} samples "
                        f"(allowing +/-{reach} samples of rotation shift)"
                    )
                flat = d.reshape(self.classes, -1)
                if any(np.array_equal(flat[i], flat[j]) for i in range(self.classes) for j in range(i)):
                    out.append("class reflector patterns must be pairwise distinct")
            if self.reflector_amplitudes is not None and np.shape(self.reflector_amplitudes) != d.shape:
                out.append("reflector_amplitudes must match reflector_depths in shape")
        return out


def _default_reflectors(cfg: SynthConfig, rng):
    margin = 24 + cfg.rotation_shift_samples
    lo, hi = margin, cfg.samples_per_frame - 1 - margin
    depths = rng.uniform(lo, hi, size=(cfg.classes, cfg.channels, cfg.reflectors_per_channel))
    amps = rng.uniform(0.3, 1.0, size=depths.shape)
    return depths, amps


def synth_generate(cfg: SynthConfig) -> RFRecording:
    """Generate one session; fully determined by ``cfg`` (including its seed)."""
    problems = cfg.problems()
    if problems:
        raise ConfigError("invalid synthetic config: " + "; ".join(problems))
    rng = make_rng(cfg.seed)
    if cfg.reflector_depths is None:
        depths, amps = _default_reflectors(cfg, rng)
    else:
        depths = np.asarray(cfg.reflector_depths, dtype=np.float64)
        amps = np.ones_like(depths) if cfg.reflector_amplitudes is None else np.asarray(cfg.reflector_amplitudes, float)
    phases = rng.uniform(0, 2 * np.pi, size=cfg.channels)
    n_frames = cfg.classes * cfg.frames_per_class
    labels = np.repeat(np.arange(cfg.classes), cfg.frames_per_class)
    t = np.arange(n_frames) / cfg.frame_rate_hz
    # (frames, channels) depth offset from wrist rotation
    shift = cfg.rotation_shift_samples * np.sin(2 * np.pi * cfg.wrist_rotation_hz * t[:, None] + phases)
    n = np.arange(cfg.samples_per_frame, dtype=np.float64)
    sigma = 0.5 * cfg.pulse_cycles * cfg.sampling_rate_hz / cfg.center_frequency_hz
    omega = 2 * np.pi * cfg.center_frequency_hz / cfg.sampling_rate_hz
    out = np.empty((cfg.channels, n_frames, cfg.samples_per_frame))
    for f in range(n_frames):
        d = depths[labels[f]] + shift[f][:, None]  # (channels, R)
        a = amps[labels[f]] * np.exp(-cfg.attenuation_per_sample * d)
        if cfg.amplitude_jitter:
            a = a * (1.0 + cfg.amplitude_jitter * rng.uniform(-1, 1, size=a.shape))
        off = n[None, None, :] - d[:, :, None]
        pulses = a[:, :, None] * np.exp(-0.5 * (off / sigma) ** 2) * np.sin(omega * off)
        out[:, f, :] = pulses.sum(axis=1)
    if cfg.noise_std:
        out += rng.normal(0.0, cfg.noise_std, size=out.shape)
    return RFRecording(
        samples=out.astype(np.float32),
        sampling_rate_hz=cfg.sampling_rate_hz,
        center_frequency_hz=cfg.center_frequency_hz,
        labels=labels,
        session_id=cfg.session_id,
        subject_id=cfg.subject_id,
        gestures=GESTURES[: cfg.classes] if cfg.classes <= len(GESTURES) else tuple(f"G{i}" for i in range(cfg.classes)),
    )


def synth_dataset(base: SynthConfig, subjects: int = 1, sessions: int = 1) -> list[RFRecording]:
    """Several sessions; each subject gets its own reflector anatomy, each session its own noise."""
    recs = []
    for s in range(subjects):
        depths, amps = base.reflector_depths, base.reflector_amplitudes
        if depths is None:
            depths, amps = _default_reflectors(base, make_rng((base.seed, s)))
        for k in range(sessions):
            cfg = SynthConfig(**{**base.__dict__, "seed": base.seed + 1000 * s + k + 1,
                                 "reflector_depths": depths, "reflector_amplitudes": amps,
                                 "subject_id": f"subject{s + 1}", "session_id": f"session{k + 1}"})
            recs.append(synth_generate(cfg))
    return recs


# --- splitting -------------------------------------------------------------------

SPLITS = ("train", "val", "test")


@dataclass
class SessionDataset:
    subject_id: str
    session_id: str
    labels: np.ndarray
    split: np.ndarray  # per-frame "train" / "val" / "test"
    inputs: Optional[np.ndarray] = None  # (frames, C, L) once preprocessed
    modality: Optional[Modality] = None

    def indices(self, name: str) -> np.ndarray:
        return np.flatnonzero(self.split == name)

    def subset(self, name: str):
        if self.inputs is None:
            raise DataError("session has not been preprocessed")
        idx = self.indices(name)
        return self.inputs[idx], self.labels[idx]

    def with_inputs(self, inputs: np.ndarray, modality: Modality) -> "SessionDataset":
        if inputs.shape[0] != self.labels.size:
            raise DataError(f"{inputs.shape[0]} inputs for {self.labels.size} frames")
        return SessionDataset(self.subject_id, self.session_id, self.labels, self.split, inputs, modality)


def split_counts(n: int, ratios: Sequence[float]) -> tuple[int, int, int]:
    n_train = int(round(ratios[0] * n))
    n_val = int(round(ratios[1] * n))
    return n_train, n_val, n - n_train - n_val


def split_session(recording: RFRecording, ratios=(0.6, 0.2, 0.2), seed: int = 0,
                  order: str = "temporal") -> SessionDataset:
    """Class-stratified train/val/test assignment.

    ``order="temporal"`` cuts each class's frame sequence into consecutive
    train, val and test blocks (``seed`` is then unused); ``order="random"``
    shuffles each class with ``seed`` before cutting.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) <= 0 or not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise ConfigError(f"split ratios must be three positive numbers summing to 1, got {ratios}")
    if order not in ("temporal", "random"):
        raise ConfigError(f"split order must be 'temporal' or 'random', got {order!r}")
    labels = recording.labels
    split = np.empty(labels.size, dtype="<U5")
    rng = make_rng(seed)
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        if order == "random":
            idx = rng.permutation(idx)
        n_tr, n_va, n_te = split_counts(idx.size, ratios)
        if min(n_tr, n_va, n_te) < 1:
            raise DataError(
                f"{recording.subject_id}/{recording.session_id}: class {cls} has {idx.size} frames, "
                f"too few for non-empty train/val/test blocks at ratios {ratios}"
            )
        split[idx[:n_tr]] = "train"
        split[idx[n_tr : n_tr + n_va]] = "val"
        split[idx[n_tr + n_va :]] = "test"
    return SessionDataset(recording.subject_id, recording.session_id, labels.copy(), split)
