"""FOA spectrogram features: STFT, amplitude in dB, phase, frequency-wise standardisation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft
import scipy.signal

SAMPLE_RATE = 48000
N_CHANNELS = 4
CLIP_SECONDS = 60
CLIP_SAMPLES = SAMPLE_RATE * CLIP_SECONDS

DB_FLOOR = 1e-10
STD_EPS = 1e-12


class ConfigMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class StftConfig:
    """Window 40 ms, hop 20 ms, 2048-point FFT, bins 1..1024 (DC dropped)."""

    sample_rate: int = SAMPLE_RATE
    win_length: int = 1920
    hop_length: int = 960
    n_fft: int = 2048
    n_bins: int = 1024
    n_frames: int = 3000

    @property
    def n_samples(self) -> int:
        return self.n_frames * self.hop_length

    def bin_frequencies(self) -> np.ndarray:
        return np.arange(1, self.n_bins + 1) * self.sample_rate / self.n_fft


DEFAULT_STFT = StftConfig()


@dataclass
class AudioClip:
    """Multichannel audio; ``samples`` has shape (channels, n_samples)."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    def validate(self):
        if self.samples.ndim != 2 or self.channels != N_CHANNELS:
            raise ConfigMismatchError(f"expected {N_CHANNELS} channels, got shape {self.samples.shape}")
        if self.sample_rate != SAMPLE_RATE:
            raise ConfigMismatchError(f"expected {SAMPLE_RATE} Hz, got {self.sample_rate}")


@dataclass
class FeatureTensor:
    amplitude_db: np.ndarray  # (4, n_frames, n_bins) float32
    phase: np.ndarray  # (4, n_frames, n_bins) float32

    @property
    def n_frames(self) -> int:
        return self.amplitude_db.shape[1]


def fit_length(x: np.ndarray, n_samples: int) -> np.ndarray:
    """Truncate or zero-pad the last axis to ``n_samples``."""
    x = np.asarray(x)
    if x.shape[-1] >= n_samples:
        return x[..., :n_samples]
    pad = [(0, 0)] * (x.ndim - 1) + [(0, n_samples - x.shape[-1])]
    return np.pad(x, pad)


def stft(channel_samples, config: StftConfig = DEFAULT_STFT, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Complex spectrogram of shape (..., n_frames, n_bins).

    Frame ``t`` is centred on sample ``(t + 0.5) * hop`` so it lines up with the
    20 ms label grid. Leading axes (e.g. channels) are transformed together.
    """
    if sample_rate != config.sample_rate:
        raise ConfigMismatchError(f"expected {config.sample_rate} Hz, got {sample_rate}")
    x = fit_length(np.asarray(channel_samples, dtype=np.float64), config.n_samples)
    half = config.win_length // 2
    centre_offset = config.hop_length // 2
    left = half - centre_offset
    right = config.win_length - config.hop_length - left
    x = np.pad(x, [(0, 0)] * (x.ndim - 1) + [(left, right)])
    frames = np.lib.stride_tricks.sliding_window_view(x, config.win_length, axis=-1)[
        ..., :: config.hop_length, :
    ][..., : config.n_frames, :]
    window = scipy.signal.get_window("hann", config.win_length)
    spec = scipy.fft.rfft(frames * window, n=config.n_fft, axis=-1)
    return spec[..., 1 : config.n_bins + 1]


def to_amplitude_db(spec: np.ndarray, floor: float = DB_FLOOR) -> np.ndarray:
    return 20.0 * np.log10(np.maximum(np.abs(spec), floor))


def to_phase(spec: np.ndarray) -> np.ndarray:
    return np.angle(spec)


@dataclass
class BinStats:
    """Per-frequency-bin mean and standard deviation, shape (..., n_bins)."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "BinStats":
        m = np.asarray(m, dtype=np.float64)
        return cls(m.mean(axis=-2), m.std(axis=-2))


def standardize_freqwise(m: np.ndarray, stats: BinStats | None = None) -> np.ndarray:
    """Standardise each frequency bin over time; zero-variance bins become 0."""
    m = np.asarray(m, dtype=np.float64)
    if stats is None:
        stats = BinStats.from_matrix(m)
    mean = np.asarray(stats.mean, dtype=np.float64)
    std = np.asarray(stats.std, dtype=np.float64)
    expected = m.shape[:-2] + m.shape[-1:]
    if mean.shape != expected or std.shape != expected:
        raise ValueError(f"stats shape {mean.shape}/{std.shape} does not match matrix {m.shape}")
    ok = std >= STD_EPS
    safe_std = np.where(ok, std, 1.0)
    out = (m - mean[..., None, :]) / safe_std[..., None, :]
    return np.where(ok[..., None, :], out, 0.0)


@dataclass
class FeatureStats:
    """Corpus-level statistics for amplitude and phase, each (4, n_bins)."""

    amplitude: BinStats
    phase: BinStats

    def save(self, path):
        np.savez(
            path,
            amp_mean=self.amplitude.mean,
            amp_std=self.amplitude.std,
            phase_mean=self.phase.mean,
            phase_std=self.phase.std,
        )

    @classmethod
    def load(cls, path) -> "FeatureStats":
        with np.load(path) as f:
            return cls(BinStats(f["amp_mean"], f["amp_std"]), BinStats(f["phase_mean"], f["phase_std"]))


def clip_spectrogram(clip: AudioClip, config: StftConfig = DEFAULT_STFT) -> np.ndarray:
    clip.validate()
    return np.stack([stft(ch, config, clip.sample_rate).astype(np.complex64) for ch in clip.samples])


def extract_features(
    clip: AudioClip, stats: FeatureStats | None = None, config: StftConfig = DEFAULT_STFT
) -> FeatureTensor:
    """Standardised amplitude-dB and phase spectrograms for all four channels.

    Without ``stats`` each recording is standardised with its own statistics.
    """
    spec = clip_spectrogram(clip, config)
    amp = to_amplitude_db(spec)
    phase = to_phase(spec)
    amp = standardize_freqwise(amp, stats.amplitude if stats else None)
    phase = standardize_freqwise(phase, stats.phase if stats else None)
    return FeatureTensor(amp.astype(np.float32), phase.astype(np.float32))


def corpus_stats(clips, config: StftConfig = DEFAULT_STFT) -> FeatureStats:
    """Pooled per-bin statistics over several clips (training-set mode)."""
    n = 0
    sums = None
    for clip in clips:
        spec = clip_spectrogram(clip, config)
        parts = [to_amplitude_db(spec).astype(np.float64), to_phase(spec).astype(np.float64)]
        cur = [(p.sum(axis=-2), (p * p).sum(axis=-2)) for p in parts]
        sums = cur if sums is None else [(a + c, b + d) for (a, b), (c, d) in zip(sums, cur)]
        n += spec.shape[-2]
    if sums is None:
        raise ValueError("no clips given")
    out = []
    for s, sq in sums:
        mean = s / n
        out.append(BinStats(mean, np.sqrt(np.maximum(sq / n - mean * mean, 0.0))))
    return FeatureStats(*out)
