"""WAV import/export: mono, 44.1 kHz, 16-bit PCM, little-endian."""

from pathlib import Path

import numpy as np
import soundfile as sf

from .config import SAMPLE_RATE
from .dsp import Waveform
from .errors import SampleRateMismatchError


def read_wav(path: Path, rate: int = SAMPLE_RATE) -> Waveform:
    """Read a WAV file; stereo input is averaged down to mono."""
    data, file_rate = sf.read(str(path), dtype="float64", always_2d=True)
    if file_rate != rate:
        raise SampleRateMismatchError(f"{path}: {file_rate} Hz, expected {rate} Hz")
    return Waveform(np.clip(data.mean(axis=1), -1.0, 1.0), file_rate)


def write_wav(path: Path, waveform: Waveform) -> None:
    """Write a waveform as 16-bit PCM."""
    sf.write(str(path), waveform.samples, waveform.rate, subtype="PCM_16", endian="LITTLE")


def concatenate(frames: list[Waveform]) -> Waveform:
    """Join frames that share a sample rate."""
    rates = {frame.rate for frame in frames}
    if len(rates) > 1:
        raise SampleRateMismatchError(f"frames mix sample rates {sorted(rates)}")
    rate = rates.pop() if rates else SAMPLE_RATE
    samples = np.concatenate([frame.samples for frame in frames]) if frames else np.zeros(0)
    return Waveform(samples, rate)
