"""WAV ingestion and waveform pre-processing.

Everything here is a pure function of its inputs. The standard chain applied
before feature extraction is::

    read_wav -> normalize_amplitude -> resample(16 kHz) -> remove_silence
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import AllSilent, CorruptHeader, EmptyAudio, ManifestError, TooShort, UnsupportedFormat

TARGET_RATE = 16000

_WAVE_FORMAT_PCM = 0x0001
_WAVE_FORMAT_IEEE_FLOAT = 0x0003
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE

LABELS = {"p": 1, "n": 0}
TASKS = ("breath", "cough", "speech")


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: int
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def __len__(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class SadConfig:
    """Frame-energy silence detector settings (non-paper defaults)."""

    frame_ms: float = 25.0
    hop_ms: float = 10.0
    threshold_db: float = -40.0
    min_voiced_ms: float = 100.0

    def __post_init__(self):
        if not (self.frame_ms >= self.hop_ms > 0):
            raise ValueError("require frame_ms >= hop_ms > 0")
        if not self.threshold_db < 0:
            raise ValueError("threshold_db must be negative")


# --------------------------------------------------------------------------
# WAV I/O
# --------------------------------------------------------------------------


def _chunks(data: bytes):
    pos = 12
    while pos + 8 <= len(data):
        cid, size = struct.unpack_from("<4sI", data, pos)
        body = data[pos + 8 : pos + 8 + size]
        yield cid, body, len(body) < size
        pos += 8 + size + (size & 1)


def read_wav(path: str | Path) -> AudioClip:
    """Read a PCM (16/24/32-bit) or IEEE-float (32-bit) WAV file.

    Stereo input is averaged down to mono; integer samples are divided by
    ``2**(bits-1)`` so they land in ``[-1, 1)``.
    """
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise CorruptHeader(f"{path}: not a RIFF/WAVE file")

    fmt = None
    pcm = None
    for cid, body, truncated in _chunks(data):
        if cid == b"fmt ":
            if len(body) < 16:
                raise CorruptHeader(f"{path}: fmt chunk too short")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
            if fmt[0] == _WAVE_FORMAT_EXTENSIBLE:
                if len(body) < 26:
                    raise CorruptHeader(f"{path}: extensible fmt chunk too short")
                sub = struct.unpack_from("<H", body, 24)[0]
                fmt = (sub,) + fmt[1:]
        elif cid == b"data":
            if truncated:
                raise CorruptHeader(f"{path}: data chunk truncated")
            pcm = body
    if fmt is None:
        raise CorruptHeader(f"{path}: missing fmt chunk")
    if pcm is None:
        raise CorruptHeader(f"{path}: missing data chunk")

    tag, channels, rate, _, block_align, bits = fmt
    if channels < 1 or rate <= 0 or bits % 8 or block_align != channels * bits // 8:
        raise CorruptHeader(f"{path}: inconsistent fmt fields")

    if tag == _WAVE_FORMAT_PCM and bits in (16, 32):
        x = np.frombuffer(pcm[: len(pcm) - len(pcm) % block_align], dtype=f"<i{bits // 8}")
        x = x.astype(np.float64) / float(2 ** (bits - 1))
    elif tag == _WAVE_FORMAT_PCM and bits == 24:
        raw = np.frombuffer(pcm[: len(pcm) - len(pcm) % block_align], dtype=np.uint8).reshape(-1, 3)
        ints = raw[:, 0].astype(np.int32) | (raw[:, 1].astype(np.int32) << 8) | (raw[:, 2].astype(np.int32) << 16)
        ints = np.where(ints >= 2**23, ints - 2**24, ints)
        x = ints.astype(np.float64) / float(2**23)
    elif tag == _WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        x = np.frombuffer(pcm[: len(pcm) - len(pcm) % block_align], dtype="<f4").astype(np.float64)
    else:
        raise UnsupportedFormat(f"{path}: format tag {tag:#06x} with {bits} bits is not supported")

    if x.size == 0:
        raise EmptyAudio(f"{path}: no samples")
    x = x.reshape(-1, channels).mean(axis=1)
    return AudioClip(x, int(rate))


def write_wav(path: str | Path, clip: AudioClip, float32: bool = False) -> None:
    """Write a mono WAV file, 16-bit PCM by default.

    The 16-bit path clips to [-1, 1) and rounds to the nearest step.
    """
    x = np.asarray(clip.samples, dtype=np.float64)
    if float32:
        payload = x.astype("<f4").tobytes()
        tag, bits = _WAVE_FORMAT_IEEE_FLOAT, 32
    else:
        ints = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
        payload = ints.tobytes()
        tag, bits = _WAVE_FORMAT_PCM, 16
    block = bits // 8
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(payload), b"WAVE",
        b"fmt ", 16, tag, 1, clip.sample_rate, clip.sample_rate * block, block, bits,
        b"data", len(payload),
    )
    Path(path).write_bytes(header + payload)


# --------------------------------------------------------------------------
# Pre-processing
# --------------------------------------------------------------------------


def normalize_amplitude(clip: AudioClip) -> AudioClip:
    """Scale so the peak magnitude is exactly 1.

    An all-zero clip is returned unchanged with a ``"silent"`` warning.
    """
    peak = float(np.max(np.abs(clip.samples))) if len(clip.samples) else 0.0
    if peak == 0.0:
        return replace(clip, warnings=clip.warnings + ("silent",))
    if peak == 1.0:
        return clip
    return replace(clip, samples=clip.samples / peak)


def _kaiser(x: np.ndarray, beta: float) -> np.ndarray:
    inside = np.abs(x) <= 1.0
    arg = np.sqrt(np.clip(1.0 - x * x, 0.0, None))
    return np.where(inside, np.i0(beta * arg) / np.i0(beta), 0.0)


def resample(clip: AudioClip, target_rate: int, taps: int = 64, beta: float = 8.0) -> AudioClip:
    """Band-limited resampling with a Kaiser-windowed sinc kernel.

    Output length is ``round(n_in * target_rate / sample_rate)``. When
    downsampling, the sinc cutoff moves to the target Nyquist frequency.
    """
    if target_rate <= 0:
        raise ValueError("target_rate must be positive")
    src = clip.sample_rate
    if target_rate == src:
        return clip
    x = np.asarray(clip.samples, dtype=np.float64)
    n_in = len(x)
    n_out = int(round(n_in * target_rate / src))
    cutoff = min(1.0, target_rate / src)
    half = taps // 2
    offsets = np.arange(-half + 1, half + 1)
    padded = np.concatenate([np.zeros(half), x, np.zeros(half + 1)])

    out = np.empty(n_out)
    block = 1 << 15
    for start in range(0, n_out, block):
        n = np.arange(start, min(n_out, start + block))
        t = n * (src / target_rate)
        base = np.floor(t).astype(np.int64)
        idx = base[:, None] + offsets[None, :]
        d = t[:, None] - idx
        kernel = cutoff * np.sinc(cutoff * d) * _kaiser(d / half, beta)
        out[n] = np.sum(padded[idx + half] * kernel, axis=1)
    return AudioClip(out, int(target_rate), clip.warnings)


def frame_log_energy(x: np.ndarray, frame: int, hop: int) -> np.ndarray:
    """Per-frame energy in dB; frames with zero energy map to ``-inf``."""
    n_frames = 1 + (len(x) - frame) // hop
    frames = np.lib.stride_tricks.sliding_window_view(x, frame)[::hop][:n_frames]
    energy = np.sum(frames * frames, axis=1)
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(energy)


def remove_silence(clip: AudioClip, cfg: SadConfig = SadConfig()) -> AudioClip:
    """Drop low-energy stretches, keeping the remaining samples in order.

    Frames below ``max_frame_dB + cfg.threshold_db`` are unvoiced. A sample
    survives only if every frame covering it is voiced, so the result is an
    order-preserving subsequence of the input and edges of voiced regions
    are not padded by a window's worth of silence. Samples after the last
    full frame inherit that frame's decision.
    """
    sr = clip.sample_rate
    frame = int(round(cfg.frame_ms * sr / 1000))
    hop = int(round(cfg.hop_ms * sr / 1000))
    x = np.asarray(clip.samples)
    if len(x) < frame:
        raise TooShort(f"clip of {len(x)} samples is shorter than one {frame}-sample frame")
    energy = frame_log_energy(x, frame, hop)
    peak = energy.max()
    if not np.isfinite(peak):
        raise AllSilent("clip contains no energy")
    voiced = np.isfinite(energy) & (energy >= peak + cfg.threshold_db)

    n_frames = len(energy)
    s = np.arange(len(x))
    first = np.clip(-((frame - 1 - s) // hop), 0, n_frames - 1)  # ceil((s - frame + 1) / hop)
    last = np.minimum(s // hop, n_frames - 1)
    bad = np.concatenate([[0], np.cumsum(~voiced)])
    keep = (bad[last + 1] - bad[first]) == 0

    out = x[keep]
    if len(out) < cfg.min_voiced_ms * sr / 1000:
        raise AllSilent(f"only {len(out) / sr * 1000:.1f} ms voiced (< {cfg.min_voiced_ms} ms)")
    if keep.all():
        return clip
    return AudioClip(out, sr, clip.warnings)


def preprocess(clip: AudioClip, sad: SadConfig | None = SadConfig(), target_rate: int = TARGET_RATE) -> AudioClip:
    """Normalize, resample to ``target_rate``, then strip silence."""
    clip = normalize_amplitude(clip)
    clip = resample(clip, target_rate)
    if sad is not None:
        clip = remove_silence(clip, sad)
    return clip


# --------------------------------------------------------------------------
# Manifest
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    path: Path
    label: int
    task: str


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            if e.id in seen:
                raise ManifestError(f"duplicate id {e.id!r}")
            if e.label not in (0, 1):
                raise ManifestError(f"{e.id}: label must be binary")
            if e.task not in TASKS:
                raise ManifestError(f"{e.id}: unknown task {e.task!r}")
            seen.add(e.id)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def ids(self) -> list[str]:
        return [e.id for e in self.entries]

    def labels(self) -> dict[str, int]:
        return {e.id: e.label for e in self.entries}

    def class_counts(self) -> tuple[int, int]:
        pos = sum(e.label for e in self.entries)
        return len(self.entries) - pos, pos

    def subset(self, ids: Iterable[str]) -> "DatasetManifest":
        wanted = set(ids)
        return DatasetManifest([e for e in self.entries if e.id in wanted])

    def by_task(self, task: str) -> "DatasetManifest":
        return DatasetManifest([e for e in self.entries if e.task == task])

    @classmethod
    def from_csv(cls, path: str | Path, check_paths: bool = True) -> "DatasetManifest":
        path = Path(path)
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["id", "path", "label", "task"]:
                raise ManifestError(f"{path}: header must be id,path,label,task")
            entries = []
            for row in reader:
                label = row["label"].strip()
                if label not in LABELS:
                    raise ManifestError(f"{path}: label must be p or n, got {label!r}")
                wav = Path(row["path"].strip())
                if not wav.is_absolute():
                    wav = path.parent / wav
                if check_paths and not wav.exists():
                    raise ManifestError(f"{path}: missing audio file {wav}")
                entries.append(ManifestEntry(row["id"].strip(), wav, LABELS[label], row["task"].strip()))
        return cls(entries)

    def to_csv(self, path: str | Path) -> None:
        """Paths under the manifest's directory are written relative to it, others absolute."""
        path = Path(path)
        base = path.parent
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", "path", "label", "task"])
            for e in self.entries:
                try:
                    p = e.path.resolve().relative_to(base.resolve())
                except ValueError:
                    p = e.path.resolve()
                w.writerow([e.id, p.as_posix(), "p" if e.label else "n", e.task])
