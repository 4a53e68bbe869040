import struct

import numpy as np
import pytest

from acoustic_screen.audio import (
    AudioClip,
    DatasetManifest,
    ManifestEntry,
    SadConfig,
    normalize_amplitude,
    preprocess,
    read_wav,
    remove_silence,
    resample,
    write_wav,
)
from acoustic_screen.errors import AllSilent, CorruptHeader, EmptyAudio, ManifestError, UnsupportedFormat


def wav_bytes(payload: bytes, tag=1, channels=1, rate=16000, bits=16) -> bytes:
    block = channels * bits // 8
    return struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(payload), b"WAVE",
        b"fmt ", 16, tag, channels, rate, rate * block, block, bits,
        b"data", len(payload),
    ) + payload


N_DFT = 2048


def dft_peak_bin(x: np.ndarray) -> int:
    """Oracle: explicit O(N^2) DFT of a centred N_DFT-sample segment, argmax over bins."""
    mid = len(x) // 2
    seg = x[mid - N_DFT // 2 : mid + N_DFT // 2]
    k = np.arange(N_DFT // 2 + 1)
    n = np.arange(N_DFT)
    mag = np.abs(np.exp(-2j * np.pi * np.outer(k, n) / N_DFT) @ seg)
    return int(np.argmax(mag))


# ---------------------------------------------------------------- read/write


def test_read_zero_file(tmp_path):
    p = tmp_path / "z.wav"
    p.write_bytes(wav_bytes(b"\x00\x00" * 16000))
    clip = read_wav(p)
    assert clip.sample_rate == 16000 and len(clip) == 16000
    assert np.all(clip.samples == 0.0)


def test_pcm16_scaling(tmp_path):
    p = tmp_path / "s.wav"
    p.write_bytes(wav_bytes(np.array([-32768, 16384], dtype="<i2").tobytes()))
    assert read_wav(p).samples.tolist() == [-1.0, 0.5]


def test_stereo_downmix(tmp_path):
    p = tmp_path / "st.wav"
    p.write_bytes(wav_bytes(np.array([0.2, 0.6], dtype="<f4").tobytes(), tag=3, channels=2, bits=32))
    assert read_wav(p).samples == pytest.approx([0.4], abs=1e-7)


def test_pcm24_and_pcm32(tmp_path):
    p = tmp_path / "24.wav"
    vals = [-(2**23), 2**22]
    payload = b"".join(int(v & 0xFFFFFF).to_bytes(3, "little") for v in vals)
    p.write_bytes(wav_bytes(payload, bits=24))
    assert read_wav(p).samples.tolist() == [-1.0, 0.5]
    p32 = tmp_path / "32.wav"
    p32.write_bytes(wav_bytes(np.array([-(2**31), 2**30], dtype="<i4").tobytes(), bits=32))
    assert read_wav(p32).samples.tolist() == [-1.0, 0.5]


def test_round_trip_16bit(tmp_path, rng):
    x = rng.uniform(-1, 1, 5000)
    p = tmp_path / "r.wav"
    write_wav(p, AudioClip(x, 22050))
    back = read_wav(p)
    assert back.sample_rate == 22050
    assert np.max(np.abs(back.samples - x)) <= 1 / 2**15


def test_round_trip_float32(tmp_path, rng):
    x = rng.uniform(-1, 1, 1000)
    p = tmp_path / "f.wav"
    write_wav(p, AudioClip(x, 16000), float32=True)
    assert np.array_equal(read_wav(p).samples, x.astype(np.float32).astype(np.float64))


def test_header_errors(tmp_path):
    bad = tmp_path / "bad.wav"
    bad.write_bytes(b"not a wave file at all")
    with pytest.raises(CorruptHeader):
        read_wav(bad)
    comp = tmp_path / "alaw.wav"
    comp.write_bytes(wav_bytes(b"\x00\x00", tag=6, bits=16))
    with pytest.raises(UnsupportedFormat):
        read_wav(comp)
    empty = tmp_path / "empty.wav"
    empty.write_bytes(wav_bytes(b""))
    with pytest.raises(EmptyAudio):
        read_wav(empty)
    trunc = tmp_path / "trunc.wav"
    trunc.write_bytes(wav_bytes(b"\x00\x00" * 100)[:-50])
    with pytest.raises(CorruptHeader):
        read_wav(trunc)


# ---------------------------------------------------------------- normalize


def test_normalize_examples():
    out = normalize_amplitude(AudioClip(np.array([0.25, -0.5]), 16000))
    assert out.samples.tolist() == [0.5, -1.0]
    peak1 = AudioClip(np.array([1.0, -0.3]), 16000)
    assert normalize_amplitude(peak1) is peak1
    z = normalize_amplitude(AudioClip(np.zeros(10), 16000))
    assert np.all(z.samples == 0) and "silent" in z.warnings


def test_normalize_idempotent(rng):
    for _ in range(20):
        clip = AudioClip(rng.normal(size=100) * rng.uniform(0.01, 10), 16000)
        once = normalize_amplitude(clip)
        assert np.array_equal(normalize_amplitude(once).samples, once.samples)


# ---------------------------------------------------------------- resample


def test_resample_identity():
    clip = AudioClip(np.arange(10, dtype=float), 16000)
    assert resample(clip, 16000) is clip


def test_resample_length():
    assert len(resample(AudioClip(np.zeros(44100), 44100), 16000)) == 16000


@pytest.mark.parametrize("src", [44100, 8000, 22050])
def test_resample_preserves_tone(src):
    sr_out = 16000
    t = np.arange(src) / src
    tone = np.sin(2 * np.pi * 1000 * t)
    out = resample(AudioClip(tone, src), sr_out)
    assert abs(dft_peak_bin(tone) - 1000 * N_DFT / src) <= 1
    assert abs(dft_peak_bin(out.samples) - 1000 * N_DFT / sr_out) <= 1


def test_resample_rejects_nyquist_alias():
    """A 7 kHz tone at 44.1 kHz survives; a 12 kHz tone is suppressed when going to 16 kHz."""
    src = 44100
    t = np.arange(src) / src
    keep = resample(AudioClip(np.sin(2 * np.pi * 7000 * t), src), 16000).samples
    drop = resample(AudioClip(np.sin(2 * np.pi * 12000 * t), src), 16000).samples
    assert np.sqrt(np.mean(drop[200:-200] ** 2)) < 0.02 * np.sqrt(np.mean(keep[200:-200] ** 2))


# ---------------------------------------------------------------- silence


def test_constant_clip_unchanged():
    clip = AudioClip(np.full(16000, 0.5), 16000)
    assert remove_silence(clip) is clip


def test_silence_duration_within_one_hop(rng):
    sr = 16000
    x = np.concatenate([np.zeros(sr // 2), 0.5 * rng.uniform(-1, 1, sr), np.zeros(sr // 2)])
    out = remove_silence(AudioClip(x, sr))
    hop = 0.010
    assert abs(out.duration - 1.0) <= hop


def test_silence_output_is_subsequence(rng):
    sr = 16000
    x = np.concatenate([1e-5 * rng.normal(size=3000), rng.normal(size=5000), 1e-5 * rng.normal(size=2000), rng.normal(size=4000)])
    out = remove_silence(AudioClip(x, sr)).samples
    # order-preserving subsequence oracle: greedy two-pointer match
    j = 0
    for v in x:
        if j < len(out) and v == out[j]:
            j += 1
    assert j == len(out)
    assert len(out) < len(x)


def test_all_silent():
    with pytest.raises(AllSilent):
        remove_silence(AudioClip(np.zeros(16000), 16000))
    # a 50 ms burst is below the 100 ms minimum
    x = np.zeros(16000)
    x[8000:8800] = 0.5
    with pytest.raises(AllSilent):
        remove_silence(AudioClip(x, 16000), SadConfig())


def test_preprocess_pipeline(rng):
    x = np.concatenate([np.zeros(22050), rng.uniform(-0.2, 0.2, 44100)])
    out = preprocess(AudioClip(x, 44100))
    assert out.sample_rate == 16000
    assert abs(out.duration - 1.0) < 0.03
    # at the target rate no resampling happens, so the peak is exactly 1
    same = preprocess(AudioClip(np.concatenate([np.zeros(8000), rng.uniform(-0.2, 0.2, 16000)]), 16000))
    assert np.max(np.abs(same.samples)) == 1.0


# ---------------------------------------------------------------- manifest


def test_manifest_round_trip(tmp_path, small_data):
    p = tmp_path / "m.csv"
    small_data.to_csv(p)
    back = DatasetManifest.from_csv(p)
    assert back.ids == small_data.ids
    assert back.labels() == small_data.labels()
    assert [e.task for e in back] == [e.task for e in small_data]


def test_manifest_errors(tmp_path):
    with pytest.raises(ManifestError):
        DatasetManifest([ManifestEntry("a", tmp_path, 1, "breath"), ManifestEntry("a", tmp_path, 0, "breath")])
    with pytest.raises(ManifestError):
        DatasetManifest([ManifestEntry("a", tmp_path, 1, "sneeze")])
    p = tmp_path / "m.csv"
    p.write_text("id,path,label,task\na,x.wav,maybe,breath\n")
    with pytest.raises(ManifestError):
        DatasetManifest.from_csv(p)
