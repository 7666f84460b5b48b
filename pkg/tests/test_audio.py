import wave

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from l3avc.audio import (AudioBuffer, SpectrogramConfig, log_spectrogram, read_matrix, read_wav, resample,
                         volume_jitter, write_matrix, write_wav)

PAPER = SpectrogramConfig()


def tone(freq, rate, seconds=1.0, amp=0.5):
    t = np.arange(int(round(seconds * rate))) / rate
    return AudioBuffer(amp * np.sin(2 * np.pi * freq * t), rate)


# -- resampling --------------------------------------------------------------

def test_resample_identity():
    buf = tone(440, 48000)
    out = resample(buf, 48000)
    assert out.sample_rate == 48000
    np.testing.assert_array_equal(out.samples, buf.samples)


def test_resample_length_and_ramp_oracle():
    rate = 24000
    buf = AudioBuffer(np.arange(rate) / rate, rate)
    out = resample(buf, 48000)
    assert len(out) == 48000
    # a slow ramp is band-limited enough that linear interpolation is an exact oracle
    t_out = np.arange(48000) / 48000
    oracle = np.interp(t_out, np.arange(rate) / rate, buf.samples)
    interior = slice(400, -400)
    np.testing.assert_allclose(out.samples[interior], oracle[interior], atol=1e-4)


@given(st.sampled_from([8000, 11025, 16000, 22050, 44100, 48000]),
       st.sampled_from([8000, 16000, 32000, 48000]))
def test_resample_preserves_dc(src, dst):
    out = resample(AudioBuffer(np.full(src // 4, 0.5), src), dst)
    assert len(out) == round(src // 4 * dst / src)
    np.testing.assert_allclose(out.samples, 0.5, atol=1e-12)


def test_resample_round_trip_tone():
    buf = tone(440, 48000)
    back = resample(resample(buf, 16000), 48000)
    assert np.abs(back.samples - buf.samples).max() <= 0.05


# -- spectrogram -------------------------------------------------------------

def test_full_size_spectrogram_shape():
    assert PAPER.window == 480 and PAPER.hop == 240
    assert (48000 - 480) // 240 + 1 == 199
    assert log_spectrogram(tone(440, 48000), PAPER).shape == (257, 199)


def test_silence_is_log_epsilon():
    s = log_spectrogram(AudioBuffer(np.zeros(48000), 48000), PAPER)
    np.testing.assert_allclose(s, np.log(1e-6), rtol=1e-6)


def test_exact_bin_tone_and_dft_oracle():
    # 937.5 Hz is bin 10 at 48000 / 512 = 93.75 Hz spacing
    buf = tone(937.5, 48000)
    s = log_spectrogram(buf, PAPER)
    assert np.all(s.argmax(axis=0) == 10)
    # direct DFT of the first Hann-windowed frame
    n = np.arange(480)
    frame = buf.samples[:480] * (0.5 - 0.5 * np.cos(2 * np.pi * n / 480))
    k = np.arange(257)[:, None]
    dft = np.abs((frame * np.exp(-2j * np.pi * k * n / 512)).sum(axis=1))
    np.testing.assert_allclose(s[:, 0], np.log(dft + 1e-6), atol=2e-5)


def test_doubling_amplitude_adds_log2():
    a = log_spectrogram(tone(937.5, 48000, amp=0.25), PAPER).astype(np.float64)
    b = log_spectrogram(tone(937.5, 48000, amp=0.5), PAPER).astype(np.float64)
    strong = a > np.log(1e-6) + 10
    assert strong.any()
    np.testing.assert_allclose((b - a)[strong], np.log(2), atol=1e-3)


@given(st.integers(200, 3000), st.floats(0.004, 0.05), st.integers(0, 3))
def test_window_count_formula(rate, window_sec, extra_pow):
    window = int(round(window_sec * rate))
    if window < 2:
        return
    fft = 1 << (int(np.ceil(np.log2(window))) + extra_pow)
    cfg = SpectrogramConfig(sample_rate=rate, window_sec=window_sec, fft_size=fft)
    buf = AudioBuffer(np.random.default_rng(rate).standard_normal(cfg.clip_samples), rate)
    s = log_spectrogram(buf, cfg)
    assert s.shape == (fft // 2 + 1, (rate - window) // (window // 2) + 1) == cfg.shape


def test_spectrogram_rejects_wrong_rate_or_length():
    with pytest.raises(ValueError):
        log_spectrogram(tone(440, 16000), PAPER)
    with pytest.raises(ValueError):
        log_spectrogram(AudioBuffer(np.zeros(47999), 48000), PAPER)


# -- volume jitter -----------------------------------------------------------

def test_volume_jitter_examples():
    out = volume_jitter(AudioBuffer(np.ones(100), 8000), np.random.default_rng(0))
    assert np.all(out.samples == out.samples[0]) and 0.9 <= out.samples[0] <= 1.1
    zero = volume_jitter(AudioBuffer(np.zeros(10), 8000), np.random.default_rng(0))
    np.testing.assert_array_equal(zero.samples, 0)
    a = volume_jitter(tone(100, 8000), np.random.default_rng(5))
    b = volume_jitter(tone(100, 8000), np.random.default_rng(5))
    np.testing.assert_array_equal(a.samples, b.samples)


# -- file formats ------------------------------------------------------------

def test_wav_round_trip(tmp_path):
    buf = tone(300, 8000, amp=0.7)
    write_wav(tmp_path / "a.wav", buf)
    back = read_wav(tmp_path / "a.wav")
    assert back.sample_rate == 8000
    np.testing.assert_allclose(back.samples, buf.samples, atol=1 / 32768)


def test_wav_stereo_is_averaged(tmp_path):
    left = np.full(50, 1000, "<i2")
    right = np.full(50, 3000, "<i2")
    with wave.open(str(tmp_path / "s.wav"), "wb") as wf:
        wf.setnchannels(2)
        wf.setsampwidth(2)
        wf.setframerate(4000)
        wf.writeframes(np.stack([left, right], axis=1).tobytes())
    np.testing.assert_allclose(read_wav(tmp_path / "s.wav").samples, 2000 / 32768)


def test_bad_wav_error_names_file(tmp_path):
    p = tmp_path / "broken.wav"
    p.write_bytes(b"RIFF\x00\x00")
    with pytest.raises(ValueError, match="broken.wav"):
        read_wav(p)


def test_matrix_round_trip(tmp_path):
    m = np.random.default_rng(0).standard_normal((5, 7)).astype(np.float32)
    write_matrix(tmp_path / "m.mat", m)
    np.testing.assert_array_equal(read_matrix(tmp_path / "m.mat"), m)
    (tmp_path / "bad.mat").write_bytes(b"L3MAT 5 7\n" + m.tobytes()[:-4])
    with pytest.raises(ValueError):
        read_matrix(tmp_path / "bad.mat")
