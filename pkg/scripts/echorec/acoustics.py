"""Room acoustics: Sabine analytics, image-source impulse responses and echo rendering.

Specular paths come from the shoebox image-source lattice. Each path carries a per-band
intensity ``(1/d²)·Π(1-α)`` over the panels it bounces off; a path touching an open
panel is dropped. An optional stochastic tail decays 60 dB over the Sabine time.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, NamedTuple

import numpy as np
from scipy import signal

from .config import FRAME_SECONDS, N_BANDS, OCTAVE_BANDS_HZ, SAMPLE_RATE, SOURCE_AMPLITUDE
from .dsp import Waveform, colored_noise
from .errors import (
    DivisionByZeroError,
    GeometryError,
    NonPositiveFrequencyError,
    SampleRateMismatchError,
    ZeroAbsorptionError,
)
from .scene import M2_TO_FT2, M3_TO_FT3, WALLS, Absorber, ShoeboxRoom, SourceReceiver

logger = logging.getLogger(__name__)

UnitSystem = Literal["imperial", "metric"]

SABINE_IMPERIAL = 0.05
SABINE_METRIC = 0.161
EARLY_WINDOW_S = 0.050
TAIL_SPACING_S = 0.0005
CLOSED_NOISE_REDUCTION_DB = 10.0

DIRECT, EARLY, LATE = 0, 1, 2
KIND_NAMES = ("direct", "early", "late")


# =============================================================================
# Sabine analytics
# =============================================================================


def total_absorption(room: Absorber, band: int, unit_system: UnitSystem = "metric") -> float:
    """Total absorption ``a = Σ S·α`` in one octave band.

    Open panels count with α = 1. Imperial results are sabins (ft²), metric results
    metric sabins (m²).
    """
    if not 0 <= band < N_BANDS:
        raise ValueError(f"band must be in 0..{N_BANDS - 1}, got {band}")
    total = sum(area * float(alpha[band]) for area, alpha in room.surfaces())
    return total * M2_TO_FT2 if unit_system == "imperial" else total


def sabine_time(volume: float, absorption: float, unit_system: UnitSystem = "metric") -> float:
    """Sabine reverberation time from volume and absorption in the given units.

    Raises:
        ZeroAbsorptionError: ``absorption`` is zero.
    """
    if absorption <= 0:
        raise ZeroAbsorptionError("total absorption is zero: perfectly reflective room")
    constant = SABINE_IMPERIAL if unit_system == "imperial" else SABINE_METRIC
    return constant * volume / absorption


def sabine_rt60(room: Absorber, band: int, unit_system: UnitSystem = "metric") -> float:
    """Reverberation time (s) of a room in one band."""
    volume = room.volume * M3_TO_FT3 if unit_system == "imperial" else room.volume
    return sabine_time(volume, total_absorption(room, band, unit_system), unit_system)


# =============================================================================
# Doppler and wavelength
# =============================================================================


@dataclass(frozen=True)
class DopplerParams:
    """Transmitted frequency, source/observer speeds and angle."""

    f0: float
    c_s: float
    c_o: float
    theta: float

    def __post_init__(self) -> None:
        """Validate the transmitted frequency."""
        if self.f0 <= 0:
            raise NonPositiveFrequencyError(f"f0 must be positive, got {self.f0}")


def doppler_shift(p: DopplerParams) -> float:
    """Frequency shift ``f0·(c_s/c_o)·cos θ``.

    The ratio uses the observer speed ``c_o`` as the divisor, not the speed of sound.
    """
    if p.c_o == 0:
        raise DivisionByZeroError("observer speed c_o is zero")
    return p.f0 * (p.c_s / p.c_o) * math.cos(p.theta)


def wavelength(f: float, c: float) -> float:
    """Wavelength ``c/f`` in the length unit of ``c``."""
    if f <= 0:
        raise NonPositiveFrequencyError(f"frequency must be positive, got {f}")
    return c / f


# =============================================================================
# Image sources
# =============================================================================


class ImageSource(NamedTuple):
    """Mirror image of the source."""

    position: np.ndarray
    walls: tuple[str, ...]  # walls mirrored across, per axis in lattice order
    index: tuple[int, int, int]

    @property
    def order(self) -> int:
        """Number of reflections."""
        return sum(abs(q) for q in self.index)


def _axis_walls(axis: int, q: int) -> list[str]:
    name = "xyz"[axis]
    planes = range(1, q + 1) if q > 0 else range(0, q, -1)
    return [f"{name}{abs(k) % 2}" for k in planes]


def image_sources(room: ShoeboxRoom, source: np.ndarray, order: int) -> list[ImageSource]:
    """All lattice images with at most ``order`` reflections, the source first.

    Along each axis image ``q`` sits at ``q·L + s`` for even ``q`` and ``q·L + (L - s)``
    for odd ``q``; it lies in lattice cell ``q`` and reaches the room by crossing ``|q|``
    wall planes.
    """
    if order < 0:
        raise ValueError("order must be non-negative")
    source = np.asarray(source, dtype=float)
    dims = np.asarray(room.dims, dtype=float)
    images = []
    span = range(-order, order + 1)
    for index in itertools.product(span, span, span):
        if sum(abs(q) for q in index) > order:
            continue
        position = np.empty(3)
        walls: list[str] = []
        for axis, q in enumerate(index):
            base = source[axis] if q % 2 == 0 else dims[axis] - source[axis]
            position[axis] = q * dims[axis] + base
            walls.extend(_axis_walls(axis, q))
        images.append(ImageSource(position, tuple(walls), index))
    images.sort(key=lambda im: (im.order, im.index))
    return images


def _fold(x: float, length: float) -> float:
    m = x % (2 * length)
    return 2 * length - m if m > length else m


def trace_reflections(
    room: ShoeboxRoom, image: ImageSource, receiver: np.ndarray
) -> tuple[str, ...]:
    """Panel ids hit along the path from ``image`` to ``receiver``, in travel order."""
    receiver = np.asarray(receiver, dtype=float)
    dims = np.asarray(room.dims, dtype=float)
    delta = receiver - image.position
    crossings = []
    for axis, q in enumerate(image.index):
        if q == 0:
            continue
        planes = range(1, q + 1) if q > 0 else range(0, q, -1)
        for k in planes:
            t = (k * dims[axis] - image.position[axis]) / delta[axis]
            crossings.append((t, axis, k))
    crossings.sort()
    panels = []
    for t, axis, k in crossings:
        point = image.position + t * delta
        folded = np.array([_fold(point[a], dims[a]) for a in range(3)])
        wall = f"{'xyz'[axis]}{abs(k) % 2}"
        folded[axis] = dims[axis] * WALLS[wall][1]
        panels.append(room.panel_at(wall, folded).panel_id)
    return tuple(panels)


# =============================================================================
# Impulse responses
# =============================================================================


@dataclass(frozen=True)
class ImpulseResponse:
    """Tap list of an impulse response, stored column-wise.

    Attributes:
        delays: Arrival times in seconds, ascending.
        intensities: Per-band energy of each tap, shape ``(n, 9)``.
        bounce_counts: Reflections per material for each tap, shape ``(n, M)``.
        kinds: ``DIRECT``, ``EARLY`` or ``LATE`` per tap.
        materials: Material names indexing ``bounce_counts`` columns.
    """

    delays: np.ndarray
    intensities: np.ndarray
    bounce_counts: np.ndarray
    kinds: np.ndarray
    materials: tuple[str, ...]
    sample_rate: int = SAMPLE_RATE
    duration: float = FRAME_SECONDS

    def __post_init__(self) -> None:
        """Validate ordering, the direct tap and intensity signs."""
        if np.any(np.diff(self.delays) < 0):
            raise GeometryError("taps must be sorted by delay")
        direct = np.flatnonzero(self.kinds == DIRECT)
        if direct.size != 1 or self.delays[direct[0]] != self.delays.min():
            raise GeometryError("impulse response needs exactly one direct tap, arriving first")
        if np.any(self.intensities < 0):
            raise GeometryError("tap intensities must be non-negative")

    @classmethod
    def single_tap(cls, delay: float = 0.0, sample_rate: int = SAMPLE_RATE) -> ImpulseResponse:
        """Impulse response holding one unit direct tap."""
        return cls(
            delays=np.array([delay]),
            intensities=np.ones((1, N_BANDS)),
            bounce_counts=np.zeros((1, 0), dtype=np.int64),
            kinds=np.array([DIRECT], dtype=np.int8),
            materials=(),
            sample_rate=sample_rate,
        )

    def __len__(self) -> int:
        """Number of taps."""
        return int(self.delays.size)

    def kind_energy(self) -> dict[str, float]:
        """Band-summed energy of the taps of each kind."""
        band_sums = self.intensities.sum(axis=1)
        return {name: float(band_sums[self.kinds == k].sum()) for k, name in enumerate(KIND_NAMES)}

    def save(self, path: Path) -> None:
        """Write the taps to a ``.npz`` archive."""
        np.savez(
            path,
            delays=self.delays,
            intensities=self.intensities,
            bounce_counts=self.bounce_counts,
            kinds=self.kinds,
            materials=np.array(self.materials, dtype=str),
            meta=np.array([self.sample_rate, self.duration]),
        )

    @classmethod
    def load(cls, path: Path) -> ImpulseResponse:
        """Read taps written by :meth:`save`."""
        with np.load(path) as data:
            return cls(
                delays=data["delays"],
                intensities=data["intensities"],
                bounce_counts=data["bounce_counts"],
                kinds=data["kinds"],
                materials=tuple(str(m) for m in data["materials"]),
                sample_rate=int(data["meta"][0]),
                duration=float(data["meta"][1]),
            )


class MaterialWeightMatrix(NamedTuple):
    """Intensity-weighted mean number of bounces per band and material."""

    weights: np.ndarray  # (9, M)
    materials: tuple[str, ...]


def material_weights(
    intensities: np.ndarray, bounce_counts: np.ndarray, materials: tuple[str, ...]
) -> MaterialWeightMatrix:
    """``w[f, m] = Σ_j I[j, f]·d[j, m] / Σ_j I[j, f]`` (zero where a band is silent)."""
    numerator = intensities.T @ bounce_counts
    denominator = intensities.sum(axis=0)[:, None]
    with np.errstate(invalid="ignore", divide="ignore"):
        weights = np.where(denominator > 0, numerator / denominator, 0.0)
    return MaterialWeightMatrix(weights, materials)


def synthesize_ir(
    room: ShoeboxRoom,
    sr: SourceReceiver,
    order: int = 3,
    rt60_tail: bool = False,
    seed: int = 0,
    sample_rate: int = SAMPLE_RATE,
    duration: float = FRAME_SECONDS,
) -> tuple[ImpulseResponse, MaterialWeightMatrix]:
    """Specular impulse response (plus optional diffuse tail) and its weight matrix.

    Raises:
        ZeroAbsorptionError: Tail requested in a band with zero absorption.
        GeometryError: Source or receiver outside the room, or coincident.
    """
    if order < 1:
        raise ValueError("order must be at least 1")
    sr.check_inside(room)
    source = np.asarray(sr.source_pos, dtype=float)
    receiver = np.asarray(sr.receiver_pos, dtype=float)
    if np.allclose(source, receiver):
        raise GeometryError("source and receiver coincide")

    materials = room.materials
    column = {name: i for i, name in enumerate(materials)}
    panels = {p.panel_id: p for p in room.panels}

    delays, intensities, counts, orders = [], [], [], []
    for image in image_sources(room, source, order):
        distance = float(np.linalg.norm(image.position - receiver))
        delay = distance / room.speed_of_sound
        if delay >= duration:
            continue
        gain = np.full(N_BANDS, 1.0 / distance**2)
        bounces = np.zeros(len(materials), dtype=np.int64)
        dropped = False
        for panel_id in trace_reflections(room, image, receiver):
            panel = panels[panel_id]
            if panel.state == "open":
                dropped = True
                break
            gain *= 1.0 - panel.effective_absorption
            bounces[column[panel.material.name]] += 1
        if dropped:
            continue
        delays.append(delay)
        intensities.append(gain)
        counts.append(bounces)
        orders.append(image.order)

    delays_arr = np.asarray(delays)
    intensity_arr = np.asarray(intensities)
    count_arr = np.asarray(counts, dtype=np.int64).reshape(len(delays), len(materials))
    order_arr = np.asarray(orders)
    sort = np.lexsort((order_arr, delays_arr))
    delays_arr, intensity_arr, count_arr, order_arr = (
        delays_arr[sort],
        intensity_arr[sort],
        count_arr[sort],
        order_arr[sort],
    )
    direct_delay = delays_arr[order_arr == 0][0]
    kinds = np.where(
        order_arr == 0, DIRECT, np.where(delays_arr - direct_delay <= EARLY_WINDOW_S, EARLY, LATE)
    ).astype(np.int8)
    weights = material_weights(intensity_arr, count_arr, materials)

    if rt60_tail:
        tail = _diffuse_tail(room, delays_arr, intensity_arr, kinds, direct_delay, seed, duration)
        if tail is not None:
            t_delay, t_intensity = tail
            delays_arr = np.concatenate([delays_arr, t_delay])
            intensity_arr = np.concatenate([intensity_arr, t_intensity])
            count_arr = np.concatenate(
                [count_arr, np.zeros((t_delay.size, len(materials)), dtype=np.int64)]
            )
            kinds = np.concatenate([kinds, np.full(t_delay.size, LATE, dtype=np.int8)])
            sort = np.argsort(delays_arr, kind="stable")
            delays_arr, intensity_arr, count_arr, kinds = (
                delays_arr[sort],
                intensity_arr[sort],
                count_arr[sort],
                kinds[sort],
            )

    ir = ImpulseResponse(
        delays_arr, intensity_arr, count_arr, kinds, materials, sample_rate, duration
    )
    logger.debug("synthesized %d taps (order %d, tail=%s)", len(ir), order, rt60_tail)
    return ir, weights


def _diffuse_tail(
    room: ShoeboxRoom,
    delays: np.ndarray,
    intensities: np.ndarray,
    kinds: np.ndarray,
    direct_delay: float,
    seed: int,
    duration: float,
) -> tuple[np.ndarray, np.ndarray] | None:
    rt60 = np.array([sabine_rt60(room, band) for band in range(N_BANDS)])
    reflected = intensities[kinds != DIRECT]
    if reflected.size == 0:
        return None
    # anchor on the latest-arriving quarter of specular reflections
    anchor = reflected[-max(1, len(reflected) // 4) :].mean(axis=0)
    start = direct_delay + EARLY_WINDOW_S
    times = np.arange(start, duration, TAIL_SPACING_S)
    if times.size == 0:
        return None
    rng = np.random.default_rng(seed)
    fluctuation = rng.exponential(1.0, size=(times.size, 1))
    decay = 10.0 ** (-6.0 * (times[:, None] - start) / rt60[None, :])
    return times, anchor[None, :] * fluctuation * decay


# =============================================================================
# Rendering
# =============================================================================


def octave_band_masks(n_fft: int, rate: int = SAMPLE_RATE) -> np.ndarray:
    """Zero-phase octave band masks on the rfft grid that sum to exactly one.

    Magnitudes of 4th-order Butterworth sections (low-pass for the lowest band,
    high-pass for the highest, band-pass between) are normalized by their sum.
    """
    freqs = np.fft.rfftfreq(n_fft, d=1.0 / rate)
    nyquist = rate / 2
    responses = []
    for i, center in enumerate(OCTAVE_BANDS_HZ):
        lo, hi = center / math.sqrt(2), center * math.sqrt(2)
        if i == 0:
            sos = signal.butter(4, hi, btype="lowpass", fs=rate, output="sos")
        elif hi >= nyquist:
            sos = signal.butter(4, lo, btype="highpass", fs=rate, output="sos")
        else:
            sos = signal.butter(4, [lo, hi], btype="bandpass", fs=rate, output="sos")
        _, h = signal.sosfreqz(sos, worN=freqs, fs=rate)
        responses.append(np.abs(h) ** 2)
    stacked = np.asarray(responses)
    return stacked / np.maximum(stacked.sum(axis=0), np.finfo(float).tiny)


def render_echo(
    ir: ImpulseResponse,
    excitation: Waveform,
    room: ShoeboxRoom,
    window_state: Literal["open", "closed"],
    seed: int = 0,
    noise: bool = True,
) -> Waveform:
    """Convolve an excitation with the impulse response and add exterior noise.

    Tap amplitudes are ``sqrt(I/I_direct)`` per band, so the direct sound has unit gain.
    Exterior noise (seeded pink noise) is added when the room has exterior panels: at
    ``exterior_noise_level`` dB re. the nominal source amplitude when a window is open,
    10 dB lower when closed. ``window_state`` is the state the frame was recorded in.
    The result is exactly one frame long and clipped to [-1, 1].
    """
    if excitation.rate != ir.sample_rate:
        raise SampleRateMismatchError(
            f"excitation at {excitation.rate} Hz, impulse response at {ir.sample_rate} Hz"
        )
    if window_state not in ("open", "closed"):
        raise ValueError(f"window_state must be 'open' or 'closed', got {window_state!r}")
    rate = ir.sample_rate
    n_out = int(round(FRAME_SECONDS * rate))
    taps = np.round(ir.delays * rate).astype(np.int64)
    keep = taps < n_out
    direct = ir.intensities[ir.kinds == DIRECT][0]
    gains = np.sqrt(ir.intensities[keep] / np.where(direct > 0, direct, 1.0))

    trains = np.zeros((N_BANDS, n_out))
    for band in range(N_BANDS):
        np.add.at(trains[band], taps[keep], gains[:, band])

    x = excitation.samples[:n_out]
    n_fft = 1 << int(math.ceil(math.log2(x.size + n_out - 1)))
    masks = octave_band_masks(n_fft, rate)
    response = (masks * np.fft.rfft(trains, n_fft, axis=1)).sum(axis=0)
    y = np.fft.irfft(np.fft.rfft(x, n_fft) * response, n_fft)[:n_out]

    exterior = [p for p in room.panels if p.exterior]
    if noise and exterior:
        level = room.exterior_noise_level
        if window_state == "closed":
            level -= CLOSED_NOISE_REDUCTION_DB
        rms = SOURCE_AMPLITUDE * 10.0 ** (level / 20.0)
        y = y + rms * colored_noise(n_out, exponent=1.0, seed=seed)

    return Waveform(np.clip(y, -1.0, 1.0), rate)
