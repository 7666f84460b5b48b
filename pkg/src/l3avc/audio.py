"""Audio front end: resampling, log-spectrograms, volume jitter, WAV I/O."""

from __future__ import annotations

import wave
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import firwin, resample_poly


@dataclass(frozen=True)
class AudioBuffer:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size < 1:
            raise ValueError("audio buffer must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(samples)):
            raise ValueError("audio buffer contains non-finite samples")
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.size

    @property
    def duration(self):
        return self.samples.size / self.sample_rate

    def segment(self, start_sec, length_sec=1.0):
        """Exactly ``round(length_sec * rate)`` samples starting at ``start_sec``.

        The start is clamped so the window stays inside the buffer.
        """
        n = int(round(length_sec * self.sample_rate))
        if n > self.samples.size:
            raise ValueError(f"buffer of {self.samples.size} samples is shorter than {n}")
        i0 = int(round(start_sec * self.sample_rate))
        i0 = min(max(i0, 0), self.samples.size - n)
        return AudioBuffer(self.samples[i0:i0 + n], self.sample_rate)


def _polyphase_filter(up, down):
    m = max(up, down)
    taps = firwin(20 * m + 1, 1.0 / m, window=("kaiser", 5.0))
    # unit DC gain on every polyphase branch, so constants survive exactly
    for p in range(up):
        taps[p::up] /= taps[p::up].sum()
    return taps / up


def resample(buf, target_rate):
    """Windowed-sinc polyphase resampling to ``target_rate``.

    Output length is ``round(len(buf) * target_rate / buf.sample_rate)``.
    """
    target_rate = int(target_rate)
    if target_rate <= 0:
        raise ValueError(f"target rate must be positive, got {target_rate}")
    if target_rate == buf.sample_rate:
        return AudioBuffer(buf.samples.copy(), target_rate)
    n_out = int(round(len(buf) * target_rate / buf.sample_rate))
    ratio = Fraction(target_rate, buf.sample_rate)
    up, down = ratio.numerator, ratio.denominator
    if buf.samples.size == 1:
        return AudioBuffer(np.full(max(n_out, 1), buf.samples[0]), target_rate)
    y = resample_poly(buf.samples, up, down, window=_polyphase_filter(up, down), padtype="line")
    if y.size >= n_out:
        y = y[:n_out]
    else:
        y = np.concatenate([y, np.full(n_out - y.size, y[-1])])
    return AudioBuffer(y, target_rate)


@dataclass(frozen=True)
class SpectrogramConfig:
    """STFT settings; ``hop`` defaults to half the window."""
    sample_rate: int = 48000
    window_sec: float = 0.01
    fft_size: int = 512
    epsilon: float = 1e-6
    clip_sec: float = 1.0

    @property
    def window(self):
        return int(round(self.window_sec * self.sample_rate))

    @property
    def hop(self):
        return self.window // 2

    @property
    def clip_samples(self):
        return int(round(self.clip_sec * self.sample_rate))

    @property
    def shape(self):
        """(frequency bands, time windows)."""
        return self.fft_size // 2 + 1, (self.clip_samples - self.window) // self.hop + 1

    def __post_init__(self):
        if self.fft_size < self.window:
            raise ValueError(f"fft_size {self.fft_size} shorter than window {self.window}")
        if self.window < 2 or self.clip_samples < self.window:
            raise ValueError("window must have >= 2 samples and fit in the clip")


def log_spectrogram(buf, cfg=SpectrogramConfig()):
    """log(|STFT| + eps) with a periodic Hann window; shape (bands, windows)."""
    if buf.sample_rate != cfg.sample_rate:
        raise ValueError(f"expected {cfg.sample_rate} Hz audio, got {buf.sample_rate} Hz")
    if len(buf) != cfg.clip_samples:
        raise ValueError(f"expected {cfg.clip_samples} samples, got {len(buf)}")
    w = cfg.window
    n = np.arange(w)
    hann = 0.5 - 0.5 * np.cos(2 * np.pi * n / w)
    frames = sliding_window_view(buf.samples, w)[::cfg.hop] * hann
    mag = np.abs(np.fft.rfft(frames, n=cfg.fft_size, axis=1))
    return np.log(mag + cfg.epsilon).T.astype(np.float32)


def volume_jitter(buf, rng, max_change=0.1):
    """Scale the whole buffer by one factor drawn from [1 - max_change, 1 + max_change]."""
    scale = rng.uniform(1.0 - max_change, 1.0 + max_change)
    return AudioBuffer(buf.samples * scale, buf.sample_rate)


# -- file formats ------------------------------------------------------------

def read_wav(path):
    """16-bit PCM WAV, any rate; stereo is averaged down to mono."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as wf:
            if wf.getsampwidth() != 2:
                raise ValueError(f"{path}: only 16-bit PCM is supported (got {8 * wf.getsampwidth()}-bit)")
            channels = wf.getnchannels()
            rate = wf.getframerate()
            raw = wf.readframes(wf.getnframes())
    except (wave.Error, EOFError) as exc:
        raise ValueError(f"{path}: malformed WAV file ({exc})") from exc
    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if channels > 1:
        data = data[: data.size - data.size % channels].reshape(-1, channels).mean(axis=1)
    if data.size == 0:
        raise ValueError(f"{path}: WAV file has no samples")
    return AudioBuffer(data, rate)


def write_wav(path, buf):
    pcm = np.clip(np.round(buf.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(buf.sample_rate)
        wf.writeframes(pcm.tobytes())


def write_matrix(path, matrix):
    """Header line ``L3MAT <rows> <cols>`` then row-major little-endian float32."""
    matrix = np.asarray(matrix, dtype="<f4")
    rows, cols = matrix.shape
    with open(path, "wb") as f:
        f.write(f"L3MAT {rows} {cols}\n".encode("ascii"))
        f.write(np.ascontiguousarray(matrix).tobytes())


def read_matrix(path):
    with open(path, "rb") as f:
        header = f.readline().decode("ascii").split()
        if len(header) != 3 or header[0] != "L3MAT":
            raise ValueError(f"{path}: not a matrix file")
        rows, cols = int(header[1]), int(header[2])
        data = np.frombuffer(f.read(), dtype="<f4")
    if data.size != rows * cols:
        raise ValueError(f"{path}: expected {rows * cols} values, found {data.size}")
    return data.reshape(rows, cols).copy()
