import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acoustic_screen.audio import AudioClip
from acoustic_screen.errors import TooShort
from acoustic_screen.features import (
    FeatureMatrix,
    MaskConfig,
    append_delta_delta,
    delta,
    export_spectrogram_image,
    load_features,
    mel_filterbank,
    mfcc,
    mfcc_dd,
    power_spectrogram,
    read_pgm,
    save_features,
    spec_augment,
)
from acoustic_screen.synth import lowpass_noise

SR = 16000


def oracle_mfcc(x: np.ndarray, n_fft=512, n_mels=64, n_mfcc=40, win=400, hop=160, floor=1e-10) -> np.ndarray:
    """Independent MFCC: explicit loops for framing, DFT, triangle filters and DCT-II."""
    n_frames = 1 + (len(x) - win) // hop
    window = np.array([0.5 - 0.5 * math.cos(2 * math.pi * n / win) for n in range(win)])
    n_bins = n_fft // 2 + 1
    # direct DFT matrix (bins x samples) for a zero-padded length n_fft transform
    k = np.arange(n_bins)[:, None]
    n = np.arange(win)[None, :]
    dft = np.exp(-2j * np.pi * k * n / n_fft)

    def mel(f):
        return 2595.0 * math.log10(1.0 + f / 700.0)

    def imel(m):
        return 700.0 * (10 ** (m / 2595.0) - 1.0)

    lo_m, hi_m = mel(0.0), mel(SR / 2)
    edges = [imel(lo_m + (hi_m - lo_m) * i / (n_mels + 1)) for i in range(n_mels + 2)]
    fb = np.zeros((n_mels, n_bins))
    for m in range(n_mels):
        left, centre, right = edges[m], edges[m + 1], edges[m + 2]
        for b in range(n_bins):
            f = b * SR / n_fft
            if left < f <= centre:
                fb[m, b] = (f - left) / (centre - left)
            elif centre < f < right:
                fb[m, b] = (right - f) / (right - centre)
    out = np.zeros((n_frames, n_mfcc))
    for t in range(n_frames):
        seg = x[t * hop : t * hop + win] * window
        spec = dft @ seg
        power = spec.real**2 + spec.imag**2
        logmel = np.log(fb @ power + floor)
        for c in range(n_mfcc):
            scale = math.sqrt(1.0 / n_mels) if c == 0 else math.sqrt(2.0 / n_mels)
            out[t, c] = scale * sum(logmel[m] * math.cos(math.pi * c * (2 * m + 1) / (2 * n_mels)) for m in range(n_mels))
    return out


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b))


def test_mfcc_matches_oracle_on_20_clips(rng):
    for i in range(20):
        n = int(rng.integers(400, 4000))
        kind = i % 3
        if kind == 0:
            x = rng.normal(size=n)
        elif kind == 1:
            x = lowpass_noise(rng, n, SR)
        else:
            x = np.sin(2 * np.pi * rng.uniform(100, 7000) * np.arange(n) / SR) + 0.01 * rng.normal(size=n)
        ours = mfcc(AudioClip(x, SR)).data
        ref = oracle_mfcc(x)
        assert ours.shape == ref.shape
        assert rel_err(ours, ref) < 1e-6


def test_frame_count_98():
    clip = AudioClip(np.random.default_rng(0).normal(size=16000), SR)
    assert mfcc(clip).shape == (98, 40)
    assert mfcc_dd(clip).shape == (98, 80)
    assert power_spectrogram(clip).shape[0] == 98


def test_too_short():
    with pytest.raises(TooShort):
        mfcc(AudioClip(np.ones(399), SR))


def test_zero_clip():
    clip = AudioClip(np.zeros(16000), SR)
    assert np.all(power_spectrogram(clip).data == 0)
    m = mfcc(clip).data
    assert np.all(m == m[0])
    assert np.ptp(m, axis=0).max() == 0.0  # frame-to-frame spread is exactly zero
    lm = np.full(64, np.log(1e-10))
    assert m[0, 0] == pytest.approx(lm.sum() / 8.0, rel=1e-12)  # orthonormal DC term = sum / sqrt(64)


def test_sine_peak_bin():
    t = np.arange(16000) / SR
    spec = power_spectrogram(AudioClip(np.sin(2 * np.pi * 1000 * t), SR)).data
    assert np.all(spec.argmax(axis=1) == 32)


def test_mel_argmax_contains_1khz():
    t = np.arange(16000) / SR
    clip = AudioClip(np.sin(2 * np.pi * 1000 * t), SR)
    fb = mel_filterbank(64, 512, SR)
    energies = power_spectrogram(clip).data @ fb.T
    winner = energies.argmax(axis=1)
    assert np.all(fb[winner, 32] > 0)  # the winning filter covers bin 32 = 1 kHz


def test_delta_examples():
    const = np.tile(np.arange(5.0), (10, 1))
    dd = append_delta_delta(FeatureMatrix(const, 10.0, "mfcc")).data
    assert np.all(dd[:, 5:] == 0)
    one = append_delta_delta(FeatureMatrix(np.ones((1, 3)), 10.0, "mfcc")).data
    assert np.all(one[:, 3:] == 0)
    ramp = np.arange(20.0)[:, None]
    d1 = delta(ramp)
    assert np.allclose(d1[2:-2], 1.0)
    d2 = delta(d1)
    assert np.allclose(d2[4:-4], 0.0)


def test_delta_delta_keeps_input(rng):
    x = rng.normal(size=(30, 40))
    out = append_delta_delta(FeatureMatrix(x, 10.0, "mfcc"))
    assert np.array_equal(out.data[:, :40], x)
    assert out.shape == (30, 80)
    assert append_delta_delta(FeatureMatrix(x, 10.0, "mfcc"), include_delta=True).shape == (30, 120)


def test_spec_augment_identity_and_determinism(rng):
    feat = FeatureMatrix(rng.normal(size=(50, 80)), 10.0, "mfcc_dd")
    none = MaskConfig(n_time_masks=0, n_freq_masks=0)
    assert np.array_equal(spec_augment(feat, none, rng).data, feat.data)
    a = spec_augment(feat, MaskConfig(), np.random.default_rng(3)).data
    b = spec_augment(feat, MaskConfig(), np.random.default_rng(3)).data
    assert np.array_equal(a, b)


@settings(max_examples=60, deadline=None)
@given(
    T=st.integers(1, 60),
    F=st.sampled_from([40, 80]),
    n_t=st.integers(0, 3),
    n_f=st.integers(0, 3),
    seed=st.integers(0, 2**31),
)
def test_spec_augment_masks_are_rectangles(T, F, n_t, n_f, seed):
    x = np.random.default_rng(seed).uniform(1.0, 2.0, size=(T, F))  # never equals the fill value 0
    cfg = MaskConfig(time_mask_len=20, freq_mask_len=50, n_time_masks=n_t, n_freq_masks=n_f)
    out = spec_augment(FeatureMatrix(x, 10.0, "mfcc_dd"), cfg, np.random.default_rng(seed)).data
    masked = out != x
    assert np.all(out[masked] == 0.0)
    # every masked cell lies in a fully masked row or a fully masked column
    full_rows = masked.all(axis=1)
    full_cols = masked.all(axis=0)
    assert np.all(masked <= (full_rows[:, None] | full_cols[None, :]))
    assert masked.sum() <= n_t * 20 * F + n_f * 50 * T
    # a single frequency mask is never wider than min(50, F)
    if n_t == 0 and n_f == 1 and T > 0:
        assert full_cols.sum() <= min(50, F)


def test_feature_cache_round_trip(tmp_path, rng):
    feat = FeatureMatrix(rng.normal(size=(7, 80)).astype(np.float32), 10.0, "mfcc_dd")
    save_features(feat, tmp_path / "a.feat")
    back = load_features(tmp_path / "a.feat")
    assert np.array_equal(back.data, feat.data) and back.kind == "mfcc_dd" and back.frame_hop_ms == 10.0


def test_spectrogram_image(tmp_path, rng):
    zero = FeatureMatrix(np.zeros((20, 257)), 10.0, "spectrogram")
    px = export_spectrogram_image(zero, tmp_path / "z.pgm")
    assert px.shape == (257, 20) and np.all(px == 0)
    assert np.array_equal(read_pgm(tmp_path / "z.pgm"), px)

    clip = AudioClip(lowpass_noise(rng, 16000, SR), SR)
    spec = power_spectrogram(clip)
    px = export_spectrogram_image(spec, tmp_path / "lp.pgm", svg=True)
    assert px.shape == (spec.shape[1], spec.shape[0])
    energy = px.astype(float).sum(axis=1)
    bottom_quarter = energy[-(px.shape[0] // 4) :].sum()
    assert bottom_quarter / energy.sum() > 0.8
    assert (tmp_path / "lp.svg").read_text().startswith("<svg")
