"""Synthetic two-class recordings with class-dependent spectral shape.

Positives are noise band-limited below 1 kHz under a slow amplitude
envelope; negatives are broadband white noise. Every clip is framed by a
short stretch of near-silence so the silence remover has work to do.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .audio import TASKS, AudioClip, DatasetManifest, ManifestEntry, write_wav

CUTOFF_HZ = 1000.0


def lowpass_noise(rng: np.random.Generator, n: int, sr: int, cutoff: float = CUTOFF_HZ) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal(n))
    spec[np.fft.rfftfreq(n, 1.0 / sr) >= cutoff] = 0.0
    return np.fft.irfft(spec, n)


def make_clip(rng: np.random.Generator, positive: bool, sr: int = 16000) -> AudioClip:
    n = int(rng.uniform(0.8, 1.6) * sr)
    t = np.arange(n) / sr
    if positive:
        body = lowpass_noise(rng, n, sr)
        body *= 0.6 + 0.4 * np.sin(2 * np.pi * rng.uniform(1.0, 3.0) * t + rng.uniform(0, 2 * np.pi))
    else:
        body = rng.standard_normal(n)
    body *= rng.uniform(0.4, 0.9) / np.max(np.abs(body))
    pad = [rng.standard_normal(int(rng.uniform(0.1, 0.3) * sr)) * 1e-4 for _ in range(2)]
    return AudioClip(np.concatenate([pad[0], body, pad[1]]), sr)


def low_band_fraction(x: np.ndarray, sr: int, cutoff: float = CUTOFF_HZ) -> float:
    power = np.abs(np.fft.rfft(x)) ** 2
    return float(power[np.fft.rfftfreq(len(x), 1.0 / sr) < cutoff].sum() / power.sum())


def synth_data(n: int, seed: int, out_dir: str | Path, sr: int = 16000) -> DatasetManifest:
    """Write ``n`` WAV files plus ``manifest.csv`` under ``out_dir``.

    Tasks cycle breath/cough/speech and labels alternate within each task,
    so classes are balanced overall and per task.
    """
    if n < 10:
        raise ValueError("synth_data needs n >= 10")
    out = Path(out_dir)
    (out / "wav").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    entries = []
    for i in range(n):
        task = TASKS[i % 3]
        label = (i // 3) % 2
        clip = make_clip(rng, bool(label), sr)
        cid = f"{task}_{i:05d}"
        path = out / "wav" / f"{cid}.wav"
        write_wav(path, clip)
        entries.append(ManifestEntry(cid, path, label, task))
    manifest = DatasetManifest(entries)
    manifest.to_csv(out / "manifest.csv")
    return manifest
