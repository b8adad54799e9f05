"""Pulsed excitation signals and mel spectrogram features."""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass, field
from pathlib import Path

import librosa
import numpy as np
from scipy import signal

from .config import FRAME_SECONDS, SAMPLE_RATE, SOURCE_AMPLITUDE, TONE_FREQUENCIES_HZ
from .errors import (
    FeatureFileError,
    SampleRateMismatchError,
    TooShortError,
    UnknownSourceKindError,
)

SOURCE_KINDS = ("puretone", "chirp", "clap", "white", "pink", "brownian", "silence")
NOISE_EXPONENTS = {"white": 0.0, "pink": 1.0, "brownian": 2.0}
CHIRP_START_HZ = 440.0
CHIRP_END_HZ = 1320.0
CLAP_BANDWIDTH_HZ = 16000.0

N_MELS = 62
N_TIME_BINS = 25


@dataclass(frozen=True)
class Waveform:
    """Mono signal in [-1, 1]."""

    samples: np.ndarray
    rate: int = SAMPLE_RATE

    def __post_init__(self) -> None:
        """Validate the amplitude bound."""
        if self.samples.size and np.max(np.abs(self.samples)) > 1.0 + 1e-12:
            raise ValueError("waveform samples must lie in [-1, 1]")

    @property
    def duration(self) -> float:
        """Length in seconds."""
        return self.samples.size / self.rate

    def __len__(self) -> int:
        """Number of samples."""
        return int(self.samples.size)


@dataclass(frozen=True)
class PulseSpec:
    """One pulse period: an active segment followed by silence."""

    source_kind: str
    frequency: float | None = None
    pulse_ms: float = 100.0
    period_ms: float = 1000.0
    amplitude: float = SOURCE_AMPLITUDE

    def __post_init__(self) -> None:
        """Validate the kind, timing and tone frequency."""
        if self.source_kind not in SOURCE_KINDS:
            raise UnknownSourceKindError(f"unknown source kind {self.source_kind!r}")
        if not 0 < self.pulse_ms < self.period_ms:
            raise ValueError("pulse_ms must be positive and shorter than period_ms")
        if self.source_kind == "puretone" and (self.frequency is None or self.frequency <= 0):
            raise ValueError("pure tones need a positive frequency")

    @classmethod
    def from_name(cls, name: str, **kwargs: float) -> PulseSpec:
        """Parse palette names such as ``tone1000``, ``chirp`` or ``pink``."""
        match = re.fullmatch(r"tone(\d+(?:\.\d+)?)", name)
        if match:
            return cls("puretone", float(match.group(1)), **kwargs)
        return cls(name, **kwargs)

    @property
    def name(self) -> str:
        """Palette name of this source."""
        if self.source_kind == "puretone":
            return f"tone{self.frequency:g}"
        return self.source_kind


def default_tones() -> list[PulseSpec]:
    """Pulsed pure tones at the nine octave centers."""
    return [PulseSpec("puretone", float(f)) for f in TONE_FREQUENCIES_HZ]


def colored_noise(n: int, exponent: float, seed: int) -> np.ndarray:
    """Unit-RMS noise with power spectral density proportional to ``1/f**exponent``."""
    rng = np.random.default_rng(seed)
    white = rng.standard_normal(n)
    spectrum = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n)
    scale = np.zeros_like(freqs)
    scale[1:] = freqs[1:] ** (-exponent / 2.0)
    shaped = np.fft.irfft(spectrum * scale, n)
    rms = np.sqrt(np.mean(shaped**2))
    return shaped / rms if rms > 0 else shaped


def generate_source(spec: PulseSpec, seed: int = 0, rate: int = SAMPLE_RATE) -> Waveform:
    """One pulse period of the requested source at peak ``spec.amplitude``."""
    n_total = int(round(spec.period_ms / 1000.0 * rate))
    n_active = int(round(spec.pulse_ms / 1000.0 * rate))
    t = np.arange(n_active) / rate
    kind = spec.source_kind

    if kind == "silence":
        active = np.zeros(n_active)
    elif kind == "puretone":
        active = np.sin(2 * np.pi * float(spec.frequency) * t)
    elif kind == "chirp":
        active = signal.chirp(
            t,
            f0=CHIRP_START_HZ,
            t1=spec.pulse_ms / 1000.0,
            f1=CHIRP_END_HZ,
            method="linear",
            phi=-90,
        )
    elif kind == "clap":
        taps = signal.firwin(129, CLAP_BANDWIDTH_HZ, fs=rate)
        active = np.zeros(n_active)
        active[: taps.size] = taps
    else:
        active = colored_noise(n_active, NOISE_EXPONENTS[kind], seed)

    peak = np.max(np.abs(active))
    if peak > 0:
        active = active * (spec.amplitude / peak)
    samples = np.zeros(n_total)
    samples[:n_active] = active
    return Waveform(samples, rate)


def repeat_pulse(pulse: Waveform, count: int) -> Waveform:
    """Recording of ``count`` identical pulse periods."""
    if count < 1:
        raise ValueError("count must be at least 1")
    return Waveform(np.tile(pulse.samples, count), pulse.rate)


def frame_split(recording: Waveform, frame_seconds: float = FRAME_SECONDS) -> list[Waveform]:
    """Non-overlapping frames aligned to the pulse period; a trailing partial is dropped."""
    if recording.rate != SAMPLE_RATE:
        raise SampleRateMismatchError(f"expected {SAMPLE_RATE} Hz, got {recording.rate} Hz")
    size = int(round(frame_seconds * recording.rate))
    count = len(recording) // size
    return [
        Waveform(recording.samples[i * size : (i + 1) * size], recording.rate) for i in range(count)
    ]


@dataclass(frozen=True)
class StftConfig:
    """Hann-windowed STFT parameters."""

    n_fft: int = 2048
    hop: int = 512
    rate: int = SAMPLE_RATE

    def __post_init__(self) -> None:
        """Validate window and hop."""
        if self.n_fft <= 0 or self.n_fft & (self.n_fft - 1):
            raise ValueError("window length must be a power of two")
        if self.hop <= 0 or self.n_fft % self.hop:
            raise ValueError("hop must divide the window length")

    @property
    def n_bins(self) -> int:
        """Number of non-negative frequency bins."""
        return self.n_fft // 2 + 1


def stft(w: Waveform, cfg: StftConfig | None = None) -> np.ndarray:
    """Spectral coefficients ``chi[m, k]`` of every full window (no centering)."""
    cfg = cfg or StftConfig()
    if len(w) < cfg.n_fft:
        raise TooShortError(f"need at least {cfg.n_fft} samples, got {len(w)}")
    coefficients = librosa.stft(
        np.asarray(w.samples, dtype=np.float64),
        n_fft=cfg.n_fft,
        hop_length=cfg.hop,
        window="hann",
        center=False,
    )
    return coefficients.T


def freq_coef(k: float, cfg: StftConfig | None = None) -> float:
    """Center frequency (Hz) of bin ``k``."""
    cfg = cfg or StftConfig()
    return k * cfg.rate / cfg.n_fft


def time_coef(m: float, cfg: StftConfig | None = None) -> float:
    """Start time (s) of frame ``m``."""
    cfg = cfg or StftConfig()
    return m * cfg.hop / cfg.rate


@dataclass(frozen=True)
class MelFilterbank:
    """Triangular mel filters over ``[0, rate/2]``, shape ``(n_mels, n_fft/2 + 1)``."""

    weights: np.ndarray = field(compare=False)
    n_mels: int = N_MELS
    fmax: float = SAMPLE_RATE / 2

    @classmethod
    def build(cls, cfg: StftConfig | None = None, n_mels: int = N_MELS) -> MelFilterbank:
        """Filterbank matching an STFT configuration."""
        cfg = cfg or StftConfig()
        fmax = cfg.rate / 2
        weights = librosa.filters.mel(
            sr=cfg.rate, n_fft=cfg.n_fft, n_mels=n_mels, fmin=0.0, fmax=fmax
        )
        return cls(np.asarray(weights, dtype=np.float64), n_mels, fmax)

    def covered_bins(self, cfg: StftConfig | None = None) -> np.ndarray:
        """Per bin, whether it lies in the closed support of at least one filter."""
        cfg = cfg or StftConfig()
        edges = librosa.mel_frequencies(n_mels=self.n_mels + 2, fmin=0.0, fmax=self.fmax)
        freqs = np.fft.rfftfreq(cfg.n_fft, d=1.0 / cfg.rate)
        lower, upper = edges[:-2], edges[2:]
        return np.any((freqs[:, None] >= lower) & (freqs[:, None] <= upper), axis=1)


@dataclass(frozen=True)
class Spectrogram:
    """Normalized ``62 x 25`` mel grid."""

    grid: np.ndarray
    frame_id: str = ""


def mel_power(
    w: Waveform, cfg: StftConfig | None = None, fb: MelFilterbank | None = None
) -> np.ndarray:
    """Mel-projected power ``(n_mels, frames)`` before compression."""
    cfg = cfg or StftConfig()
    fb = fb or MelFilterbank.build(cfg)
    power = np.abs(stft(w, cfg)) ** 2
    return fb.weights @ power.T


def pool_time(grid: np.ndarray, n_bins: int = N_TIME_BINS) -> np.ndarray:
    """Average-pool the time axis into ``n_bins`` evenly sized column groups.

    Every column lands in exactly one bin and bin sizes differ by at most one. Grids
    narrower than ``n_bins`` are stretched by repeating their nearest column.
    """
    n_frames = grid.shape[1]
    if n_frames < 1:
        raise TooShortError("cannot pool an empty grid")
    if n_frames < n_bins:
        return grid[:, (np.arange(n_bins) * n_frames) // n_bins]
    groups = np.array_split(np.arange(n_frames), n_bins)
    return np.stack([grid[:, cols].mean(axis=1) for cols in groups], axis=1)


def normalize(grid: np.ndarray) -> np.ndarray:
    """Min-max scale to [0, 1]; a constant grid maps to zeros."""
    low, high = grid.min(), grid.max()
    if high <= low:
        return np.zeros_like(grid)
    return (grid - low) / (high - low)


def mel_spectrogram(
    w: Waveform,
    cfg: StftConfig | None = None,
    fb: MelFilterbank | None = None,
    frame_id: str = "",
) -> Spectrogram:
    """Log-mel spectrogram pooled to 25 time bins and normalized to [0, 1]."""
    compressed = np.log1p(mel_power(w, cfg, fb))
    return Spectrogram(normalize(pool_time(compressed)), frame_id)


# =============================================================================
# Feature files
# =============================================================================

FEATURE_MAGIC = b"ECHF"
FEATURE_VERSION = 1


def write_feature(path: Path, grid: np.ndarray) -> None:
    """Write a grid as magic, version, shape and little-endian float32 data."""
    grid = np.asarray(grid)
    header = FEATURE_MAGIC + struct.pack("<HH", FEATURE_VERSION, grid.ndim)
    header += struct.pack(f"<{grid.ndim}I", *grid.shape)
    with open(path, "wb") as f:
        f.write(header)
        f.write(grid.astype("<f4").tobytes())


def read_feature(path: Path) -> np.ndarray:
    """Read a grid written by :func:`write_feature`."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != FEATURE_MAGIC:
        raise FeatureFileError(f"{path}: bad magic")
    if len(data) < 8:
        raise FeatureFileError(f"{path}: truncated header")
    version, ndim = struct.unpack_from("<HH", data, 4)
    if version != FEATURE_VERSION:
        raise FeatureFileError(f"{path}: unsupported version {version}")
    offset = 8 + 4 * ndim
    if len(data) < offset:
        raise FeatureFileError(f"{path}: truncated header")
    shape = struct.unpack_from(f"<{ndim}I", data, 8)
    expected = offset + 4 * int(np.prod(shape))
    if len(data) != expected:
        raise FeatureFileError(f"{path}: expected {expected} bytes, found {len(data)}")
    return np.frombuffer(data, dtype="<f4", offset=offset).reshape(shape).astype(np.float64)
