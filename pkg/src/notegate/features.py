"""Audio ingestion and log-mel features."""
from __future__ import annotations

from dataclasses import dataclass, replace
from math import gcd

import numpy as np
from scipy.io import wavfile
from scipy.signal import get_window, resample_poly

LOG_EPS = 1e-10


class AudioError(ValueError):
    """Unreadable, unsupported or empty audio."""


@dataclass(frozen=True)
class FeatureConfig:
    sample_rate: int = 16000
    n_fft: int = 1024
    hop_length: int = 320
    n_mels: int = 80
    f_min: float = 0.0
    f_max: float | None = None  # None = Nyquist

    @property
    def hop_seconds(self) -> float:
        return self.hop_length / self.sample_rate


@dataclass(frozen=True, eq=False)
class AudioClip:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim != 1:
            raise AudioError(f"AudioClip expects mono samples, got shape {x.shape}")
        if x.size == 0:
            raise AudioError("zero-length audio")
        if not np.all(np.isfinite(x)):
            raise AudioError("audio contains non-finite samples")
        if int(self.sample_rate) <= 0:
            raise AudioError(f"sample rate must be positive, got {self.sample_rate}")
        x = x.copy()
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True, eq=False)
class MelSpectrogram:
    frames: np.ndarray
    hop_seconds: float = 0.020
    frame_zero_time: float = 0.0
    normalized: bool = False

    def __post_init__(self):
        m = np.array(self.frames, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] < 1:
            raise ValueError(f"mel matrix must be T x n_mels with T >= 1, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("mel matrix contains non-finite values")
        if self.normalized and (m.min() < -1.0 or m.max() > 1.0):
            raise ValueError("normalized mel values must lie in [-1, 1]")
        m.setflags(write=False)
        object.__setattr__(self, "frames", m)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    def frame_times(self) -> np.ndarray:
        return self.frame_zero_time + np.arange(self.n_frames) * self.hop_seconds


def load_audio(path) -> AudioClip:
    """Read a PCM/float WAV file, mix to mono and scale to [-1, 1]."""
    try:
        sr, data = wavfile.read(str(path))
    except FileNotFoundError:
        raise AudioError(f"no such file: {path}") from None
    except (ValueError, OSError, EOFError) as exc:
        raise AudioError(f"cannot read {path}: {exc}") from exc

    if data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        # scipy left-justifies 24-bit samples into int32, so one scale covers both
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.float32:
        x = data.astype(np.float64)
    else:
        raise AudioError(f"unsupported sample encoding {data.dtype} in {path}")

    if x.ndim == 2:
        x = x.mean(axis=1)
    if x.size == 0:
        raise AudioError(f"zero-length audio in {path}")
    if not np.all(np.isfinite(x)):
        raise AudioError(f"non-finite samples in {path}")
    return AudioClip(np.clip(x, -1.0, 1.0), sr)


def save_audio(path, clip: AudioClip, subtype: str = "int16") -> None:
    if subtype == "int16":
        data = np.round(np.clip(clip.samples, -1.0, 32767 / 32768) * 32768).astype(np.int16)
    elif subtype == "float32":
        data = clip.samples.astype(np.float32)
    else:
        raise ValueError(f"unknown subtype {subtype!r}")
    wavfile.write(str(path), clip.sample_rate, data)


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Band-limited resampling via a Kaiser-windowed sinc polyphase filter."""
    target_rate = int(target_rate)
    if target_rate <= 0:
        raise ValueError(f"target rate must be positive, got {target_rate}")
    if target_rate == clip.sample_rate:
        return clip
    g = gcd(target_rate, clip.sample_rate)
    up, down = target_rate // g, clip.sample_rate // g
    y = resample_poly(clip.samples, up, down)
    return AudioClip(np.clip(y, -1.0, 1.0), target_rate)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(sample_rate: int, n_fft: int, n_mels: int,
                   f_min: float = 0.0, f_max: float | None = None) -> np.ndarray:
    """HTK-mel triangular filters with unit peak, shape ``(n_mels, n_fft//2 + 1)``."""
    if f_max is None:
        f_max = sample_rate / 2.0
    fft_freqs = np.linspace(0.0, sample_rate / 2.0, n_fft // 2 + 1)
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    lower = edges[:-2, None]
    center = edges[1:-1, None]
    upper = edges[2:, None]
    rising = (fft_freqs[None, :] - lower) / (center - lower)
    falling = (upper - fft_freqs[None, :]) / (upper - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def stft_power(samples: np.ndarray, n_fft: int, hop_length: int) -> np.ndarray:
    """Centered (reflect-padded) Hann STFT power, shape ``(T, n_fft//2 + 1)``."""
    pad = n_fft // 2
    x = np.pad(np.asarray(samples, dtype=np.float64), pad, mode="reflect")
    n_frames = samples.size // hop_length + 1
    idx = np.arange(n_fft)[None, :] + hop_length * np.arange(n_frames)[:, None]
    window = get_window("hann", n_fft, fftbins=True)
    spec = np.fft.rfft(x[idx] * window, axis=1)
    return spec.real ** 2 + spec.imag ** 2


def mel_spectrogram(clip: AudioClip, config: FeatureConfig = FeatureConfig()) -> MelSpectrogram:
    """Raw log-mel spectrogram; frame ``i`` is centred at ``i * hop / sr``."""
    if clip.sample_rate != config.sample_rate:
        raise ValueError(
            f"clip is at {clip.sample_rate} Hz, features expect {config.sample_rate} Hz; resample first")
    if clip.samples.size < config.hop_length:
        raise AudioError(
            f"clip of {clip.samples.size} samples is shorter than one hop ({config.hop_length})")
    power = stft_power(clip.samples, config.n_fft, config.hop_length)
    fb = mel_filterbank(config.sample_rate, config.n_fft, config.n_mels, config.f_min, config.f_max)
    mel = np.log(power @ fb.T + LOG_EPS)
    return MelSpectrogram(mel, hop_seconds=config.hop_seconds, frame_zero_time=0.0)


def normalize_mel(mel: MelSpectrogram) -> MelSpectrogram:
    """Affinely map the recording's [min, max] onto [-1, 1]."""
    if mel.normalized:
        raise ValueError("mel spectrogram is already normalized")
    m = mel.frames
    lo, hi = m.min(), m.max()
    if hi == lo:
        out = np.zeros_like(m)
    else:
        out = np.clip(2.0 * (m - lo) / (hi - lo) - 1.0, -1.0, 1.0)
    return replace(mel, frames=out, normalized=True)


def features_from_wav(path, config: FeatureConfig = FeatureConfig()) -> tuple[AudioClip, MelSpectrogram]:
    clip = resample(load_audio(path), config.sample_rate)
    return clip, mel_spectrogram(clip, config)
