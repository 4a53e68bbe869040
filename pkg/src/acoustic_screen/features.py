"""Frame-level features: power spectrogram, MFCC, delta-delta, SpecAugment.

Also holds the binary feature-cache format and spectrogram image export.
"""

from __future__ import annotations

import base64
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.fft import dct

from .audio import AudioClip
from .errors import TooShort

KINDS = ("mfcc", "mfcc_dd", "ssl", "spectrogram")


@dataclass(frozen=True)
class FrameConfig:
    window_ms: float = 25.0
    hop_ms: float = 10.0
    n_fft: int = 512  # non-paper default
    n_mels: int = 64  # non-paper default
    n_mfcc: int = 40
    delta_window: int = 2  # non-paper default
    log_floor: float = 1e-10  # non-paper default
    include_delta: bool = False  # True -> static + delta + delta-delta (120 dims)

    def __post_init__(self):
        if self.n_mfcc > self.n_mels:
            raise ValueError("n_mfcc must not exceed n_mels")
        if self.log_floor <= 0:
            raise ValueError("log_floor must be positive")

    def window_samples(self, sr: int) -> int:
        return int(round(self.window_ms * sr / 1000))

    def hop_samples(self, sr: int) -> int:
        return int(round(self.hop_ms * sr / 1000))

    @property
    def feature_dim(self) -> int:
        return self.n_mfcc * (3 if self.include_delta else 2)


@dataclass(frozen=True)
class MaskConfig:
    time_mask_len: int = 20
    freq_mask_len: int = 50
    n_time_masks: int = 1  # non-paper default
    n_freq_masks: int = 1  # non-paper default
    fill: float = 0.0  # non-paper default

    def __post_init__(self):
        if min(self.time_mask_len, self.freq_mask_len, self.n_time_masks, self.n_freq_masks) < 0:
            raise ValueError("mask lengths and counts must be non-negative")


@dataclass(frozen=True)
class FeatureMatrix:
    data: np.ndarray
    frame_hop_ms: float
    kind: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown feature kind {self.kind!r}")
        if self.data.ndim != 2 or self.data.shape[0] < 1:
            raise ValueError(f"feature matrix must be T x F with T >= 1, got {self.data.shape}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


def hann(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def frame_signal(x: np.ndarray, window: int, hop: int) -> np.ndarray:
    if len(x) < window:
        raise TooShort(f"clip of {len(x)} samples is shorter than the {window}-sample window")
    n_frames = 1 + (len(x) - window) // hop
    return np.lib.stride_tricks.sliding_window_view(x, window)[::hop][:n_frames]


def power_spectrogram(clip: AudioClip, cfg: FrameConfig = FrameConfig()) -> FeatureMatrix:
    """|rfft|^2 of Hann-windowed frames; rows are frames, ``n_fft//2 + 1`` columns."""
    window = cfg.window_samples(clip.sample_rate)
    hop = cfg.hop_samples(clip.sample_rate)
    if cfg.n_fft < window:
        raise ValueError("n_fft must be at least the window length")
    frames = frame_signal(np.asarray(clip.samples, dtype=np.float64), window, hop)
    spec = np.fft.rfft(frames * hann(window), n=cfg.n_fft, axis=1)
    power = spec.real**2 + spec.imag**2
    return FeatureMatrix(power, cfg.hop_ms, "spectrogram")


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_fft: int, sr: int, fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """Triangular HTK-mel filters, shape ``(n_mels, n_fft//2 + 1)``."""
    fmax = sr / 2.0 if fmax is None else fmax
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * sr / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lo) / (mid - lo)
    falling = (hi - freqs[None, :]) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def log_mel_energies(clip: AudioClip, cfg: FrameConfig = FrameConfig()) -> np.ndarray:
    power = power_spectrogram(clip, cfg).data
    fb = mel_filterbank(cfg.n_mels, cfg.n_fft, clip.sample_rate)
    return np.log(power @ fb.T + cfg.log_floor)


def mfcc(clip: AudioClip, cfg: FrameConfig = FrameConfig()) -> FeatureMatrix:
    """Static MFCCs: orthonormal DCT-II of log mel energies, first ``n_mfcc`` kept."""
    coeffs = dct(log_mel_energies(clip, cfg), type=2, axis=1, norm="ortho")[:, : cfg.n_mfcc]
    return FeatureMatrix(coeffs, cfg.hop_ms, "mfcc")


def delta(x: np.ndarray, window: int = 2) -> np.ndarray:
    """Regression deltas along time with edge replication."""
    T = x.shape[0]
    padded = np.concatenate([np.repeat(x[:1], window, axis=0), x, np.repeat(x[-1:], window, axis=0)])
    denom = 2.0 * sum(n * n for n in range(1, window + 1))
    out = np.zeros_like(x, dtype=np.float64)
    for n in range(1, window + 1):
        out += n * (padded[window + n : window + n + T] - padded[window - n : window - n + T])
    return out / denom


def append_delta_delta(feat: FeatureMatrix, window: int = 2, include_delta: bool = False) -> FeatureMatrix:
    """Append second-order deltas (and optionally first-order) to base features."""
    d1 = delta(feat.data, window)
    d2 = delta(d1, window)
    blocks = [feat.data, d1, d2] if include_delta else [feat.data, d2]
    return FeatureMatrix(np.concatenate(blocks, axis=1), feat.frame_hop_ms, "mfcc_dd")


def mfcc_dd(clip: AudioClip, cfg: FrameConfig = FrameConfig()) -> FeatureMatrix:
    return append_delta_delta(mfcc(clip, cfg), cfg.delta_window, cfg.include_delta)


def spec_augment(feat: FeatureMatrix, cfg: MaskConfig, rng: np.random.Generator) -> FeatureMatrix:
    """Time and frequency masking; widths drawn uniformly in ``[0, min(len, dim)]``."""
    out = feat.data.copy()
    T, F = out.shape
    for _ in range(cfg.n_time_masks):
        w = int(rng.integers(0, min(cfg.time_mask_len, T) + 1))
        t0 = int(rng.integers(0, T - w + 1))
        out[t0 : t0 + w, :] = cfg.fill
    for _ in range(cfg.n_freq_masks):
        w = int(rng.integers(0, min(cfg.freq_mask_len, F) + 1))
        f0 = int(rng.integers(0, F - w + 1))
        out[:, f0 : f0 + w] = cfg.fill
    return FeatureMatrix(out, feat.frame_hop_ms, feat.kind)


# --------------------------------------------------------------------------
# Feature cache files
# --------------------------------------------------------------------------

_CACHE_MAGIC = b"AFEA"
_CACHE_VERSION = 1
_CACHE_HEADER = struct.Struct("<4sHHIIf")


def save_features(feat: FeatureMatrix, path: str | Path) -> None:
    """Little-endian record: magic, version, kind, T, F, hop_ms, then float32 rows."""
    T, F = feat.shape
    header = _CACHE_HEADER.pack(_CACHE_MAGIC, _CACHE_VERSION, KINDS.index(feat.kind), T, F, feat.frame_hop_ms)
    Path(path).write_bytes(header + np.ascontiguousarray(feat.data, dtype="<f4").tobytes())


def load_features(path: str | Path) -> FeatureMatrix:
    raw = Path(path).read_bytes()
    if len(raw) < _CACHE_HEADER.size:
        raise ValueError(f"{path}: truncated feature file")
    magic, version, kind, T, F, hop = _CACHE_HEADER.unpack_from(raw, 0)
    if magic != _CACHE_MAGIC or version != _CACHE_VERSION or kind >= len(KINDS):
        raise ValueError(f"{path}: not a version-{_CACHE_VERSION} feature file")
    body = raw[_CACHE_HEADER.size :]
    if len(body) != 4 * T * F:
        raise ValueError(f"{path}: expected {T}x{F} floats, found {len(body) // 4}")
    data = np.frombuffer(body, dtype="<f4").reshape(T, F).astype(np.float32)
    return FeatureMatrix(data, float(hop), KINDS[kind])


# --------------------------------------------------------------------------
# Spectrogram images
# --------------------------------------------------------------------------


def spectrogram_pixels(spec: FeatureMatrix, top_db: float = 80.0, floor: float = 1e-10) -> np.ndarray:
    """8-bit intensities of shape (F, T), low frequencies on the bottom row.

    Power is converted to dB, clipped to ``top_db`` below the image maximum
    and min-max scaled per image. A constant image maps to all zeros.
    """
    db = 10.0 * np.log10(np.asarray(spec.data, dtype=np.float64) + floor)
    db = np.maximum(db, db.max() - top_db)
    lo, hi = db.min(), db.max()
    if hi - lo <= 0:
        scaled = np.zeros_like(db)
    else:
        scaled = (db - lo) / (hi - lo)
    return np.round(255.0 * scaled.T[::-1]).astype(np.uint8)


def _png_bytes(pixels: np.ndarray) -> bytes:
    h, w = pixels.shape
    raw = b"".join(b"\x00" + pixels[r].tobytes() for r in range(h))

    def chunk(tag: bytes, body: bytes) -> bytes:
        return struct.pack(">I", len(body)) + tag + body + struct.pack(">I", zlib.crc32(tag + body) & 0xFFFFFFFF)

    return (
        b"\x89PNG\r\n\x1a\n"
        + chunk(b"IHDR", struct.pack(">IIBBBBB", w, h, 8, 0, 0, 0, 0))
        + chunk(b"IDAT", zlib.compress(raw, 9))
        + chunk(b"IEND", b"")
    )


def export_spectrogram_image(spec: FeatureMatrix, path: str | Path, svg: bool = False) -> np.ndarray:
    """Write a binary PGM (P5) of the spectrogram; optionally an SVG next to it.

    Returns the pixel array that was written.
    """
    if spec.kind != "spectrogram":
        raise ValueError(f"expected a spectrogram, got kind {spec.kind!r}")
    pixels = spectrogram_pixels(spec)
    h, w = pixels.shape
    path = Path(path)
    path.write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes())
    if svg:
        data = base64.b64encode(_png_bytes(pixels)).decode("ascii")
        path.with_suffix(".svg").write_text(
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">'
            f'<image width="{w}" height="{h}" preserveAspectRatio="none" '
            f'href="data:image/png;base64,{data}"/></svg>\n',
            encoding="utf-8",
        )
    return pixels


def read_pgm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)
