"""Tests for scenes, Sabine analytics, impulse responses and echo rendering."""

import math
from pathlib import Path

import numpy as np
import pytest

SCENES = Path(__file__).parent.parent / "scripts" / "scenes"


def test_bathroom_inventory_rt60():
    """The bathroom inventory totals 69.23 sabins and reverberates for 0.94 s."""
    from scripts.echorec.acoustics import sabine_rt60, total_absorption
    from scripts.echorec.scene import load_scene

    scene = load_scene(SCENES / "bathroom.conf")
    absorption = total_absorption(scene.absorber, band=2, unit_system="imperial")
    rt60 = sabine_rt60(scene.absorber, band=2, unit_system="imperial")

    assert absorption == pytest.approx(69.23, abs=1e-6)
    assert rt60 == pytest.approx(0.936, abs=5e-4)
    assert f"{rt60:.2f}" == "0.94"


def test_metric_shoebox_rt60():
    """A 5 x 4 x 3 m room with uniform alpha 0.2 gives 0.161 * 60 / 18.8 s."""
    from scripts.echorec.acoustics import sabine_rt60, total_absorption
    from scripts.echorec.scene import uniform_room

    room = uniform_room((5.0, 4.0, 3.0), 0.2)

    assert total_absorption(room, band=4) == pytest.approx(18.8)
    assert sabine_rt60(room, band=4) == pytest.approx(0.161 * 60 / 18.8)
    assert sabine_rt60(room, band=4) == pytest.approx(0.514, abs=1e-3)


def test_sabine_time_zero_absorption():
    """A perfectly reflective room has no finite reverberation time."""
    from scripts.echorec.acoustics import sabine_rt60, sabine_time
    from scripts.echorec.errors import ZeroAbsorptionError
    from scripts.echorec.scene import uniform_room

    with pytest.raises(ZeroAbsorptionError):
        sabine_time(100.0, 0.0)
    with pytest.raises(ZeroAbsorptionError):
        sabine_rt60(uniform_room((3.0, 3.0, 3.0), 0.0), band=2)


def test_open_panel_absorbs_everything():
    """Opening a panel raises total absorption by its full area."""
    from scripts.echorec.acoustics import total_absorption
    from scripts.echorec.scene import load_scene

    room = load_scene(SCENES / "window_sweep.conf").room
    closed = total_absorption(room, band=2)
    opened = total_absorption(room.with_panel("window", state="open"), band=2)

    window = room.panel("window")
    assert window.area == pytest.approx(2.0 * 1.4)
    assert opened - closed == pytest.approx(window.area * (1.0 - 0.25))
    assert room.with_panel("window", state="open").has_open_exterior


def test_doppler_shift_and_guards():
    """doppler_shift divides by the observer speed and validates inputs."""
    from scripts.echorec.acoustics import DopplerParams, doppler_shift
    from scripts.echorec.errors import DivisionByZeroError, NonPositiveFrequencyError

    assert doppler_shift(DopplerParams(1000.0, 10.0, 340.0, 0.0)) == pytest.approx(1000 * 10 / 340)
    right_angle = DopplerParams(1000.0, 10.0, 340.0, math.pi / 2)
    assert doppler_shift(right_angle) == pytest.approx(0.0, abs=1e-9)
    with pytest.raises(DivisionByZeroError):
        doppler_shift(DopplerParams(1000.0, 10.0, 0.0, 0.0))
    with pytest.raises(NonPositiveFrequencyError):
        DopplerParams(0.0, 10.0, 340.0, 0.0)


def test_wavelength():
    """wavelength is c / f and rejects non-positive frequencies."""
    from scripts.echorec.acoustics import wavelength
    from scripts.echorec.errors import NonPositiveFrequencyError

    assert wavelength(1000.0, 343.0) == pytest.approx(0.343)
    with pytest.raises(NonPositiveFrequencyError):
        wavelength(-5.0, 343.0)


def test_image_source_counts_and_positions():
    """Images up to order n number 1, 7, 25, 63 and mirror across the walls."""
    from scripts.echorec.acoustics import image_sources
    from scripts.echorec.scene import uniform_room

    room = uniform_room((5.0, 4.0, 3.0), 0.2)
    source = np.array([1.0, 1.0, 1.0])

    assert [len(image_sources(room, source, n)) for n in range(4)] == [1, 7, 25, 63]
    images = {im.index: im for im in image_sources(room, source, 1)}
    assert np.allclose(images[(0, 0, 0)].position, source)
    assert np.allclose(images[(1, 0, 0)].position, [9.0, 1.0, 1.0])
    assert images[(1, 0, 0)].walls == ("x1",)
    assert np.allclose(images[(-1, 0, 0)].position, [-1.0, 1.0, 1.0])
    assert images[(0, 0, -1)].walls == ("z0",)


def test_free_field_has_only_direct_path():
    """With every wall open only the direct tap survives."""
    from scripts.echorec.acoustics import synthesize_ir
    from scripts.echorec.scene import SourceReceiver, open_room

    room = open_room((5.0, 4.0, 3.0))
    pose = SourceReceiver((1.0, 2.0, 1.5), (3.0, 2.0, 1.5))
    ir, weights = synthesize_ir(room, pose, order=3)

    assert len(ir) == 1
    assert ir.delays[0] == pytest.approx(2.0 / 343.0)
    assert np.allclose(ir.intensities[0], 1.0 / 4.0)
    assert np.all(weights.weights == 0)


def test_impulse_response_invariants():
    """Taps are sorted, the direct tap is first and strongest, reflections attenuate."""
    from scripts.echorec.acoustics import DIRECT, EARLY, synthesize_ir
    from scripts.echorec.scene import SourceReceiver, uniform_room

    room = uniform_room((5.0, 4.0, 3.0), 0.2)
    pose = SourceReceiver.stacked((2.0, 2.0, 1.5))
    ir, weights = synthesize_ir(room, pose, order=2)

    assert len(ir) == 25
    assert np.all(np.diff(ir.delays) >= 0)
    assert ir.kinds[0] == DIRECT
    assert np.all(ir.intensities <= ir.intensities[0] + 1e-12)
    assert np.all(ir.kinds[1:] != DIRECT)
    assert EARLY in ir.kinds
    # a first-order tap keeps (1 - alpha) of its spherical spreading
    first = int(np.flatnonzero(ir.bounce_counts[:, 0] == 1)[0])
    distance = ir.delays[first] * 343.0
    assert ir.intensities[first, 0] == pytest.approx(0.8 / distance**2)
    assert weights.materials == ("uniform",)
    assert np.all((weights.weights >= 0) & (weights.weights <= 2))


def _mirror_lattice(dims, source, order):
    """Image positions reached by repeated wall mirroring, keyed to their fewest reflections."""
    found = {tuple(source): 0}
    frontier = [tuple(source)]
    for depth in range(1, order + 1):
        reached = []
        for point in frontier:
            for axis, length in enumerate(dims):
                for plane in (0.0, length):
                    mirrored = list(point)
                    mirrored[axis] = round(2 * plane - point[axis], 9)
                    key = tuple(mirrored)
                    if key not in found:
                        found[key] = depth
                        reached.append(key)
        frontier = reached
    return found


def test_specular_taps_match_mirror_lattice():
    """Every tap's delay and energy agree with a brute-force mirroring of the source."""
    from scripts.echorec.acoustics import synthesize_ir
    from scripts.echorec.scene import SourceReceiver, uniform_room

    dims, alpha = (5.0, 4.0, 3.0), 0.3
    source, receiver = (1.0, 1.2, 0.9), (3.1, 2.7, 1.6)
    room = uniform_room(dims, alpha)
    ir, _ = synthesize_ir(room, SourceReceiver(source, receiver), order=3)

    images = _mirror_lattice(dims, source, 3)
    assert len(images) == 63
    expected = []
    for position, reflections in images.items():
        distance = float(np.linalg.norm(np.subtract(position, receiver)))
        expected.append((distance / room.speed_of_sound, (1 - alpha) ** reflections / distance**2))
    expected.sort()
    actual = sorted(zip(ir.delays.tolist(), ir.intensities[:, 0].tolist()))

    assert len(actual) == len(expected)
    assert np.allclose(actual, expected, rtol=1e-8, atol=0.0)


def test_reflected_energy_falls_with_absorption():
    """More absorptive walls return less reflected energy; the direct path is unchanged."""
    from scripts.echorec.acoustics import synthesize_ir
    from scripts.echorec.scene import SourceReceiver, uniform_room

    pose = SourceReceiver((1.0, 1.2, 0.9), (3.1, 2.7, 1.6))
    energies = []
    for alpha in (0.05, 0.2, 0.4, 0.6, 0.9):
        ir, _ = synthesize_ir(uniform_room((5.0, 4.0, 3.0), alpha), pose, order=3)
        energy = ir.kind_energy()
        energies.append(energy["early"] + energy["late"])
        assert energy["direct"] == pytest.approx(9 / (2.1**2 + 1.5**2 + 0.7**2))

    assert np.all(np.diff(energies) < 0)


def test_rt60_scales_with_room_size():
    """Scaling every dimension by k scales the Sabine time by k."""
    from scripts.echorec.acoustics import sabine_rt60
    from scripts.echorec.scene import uniform_room

    dims = np.array([5.0, 4.0, 3.0])
    base = sabine_rt60(uniform_room(tuple(dims), 0.25), band=3)
    surface = 2 * (5 * 4 + 5 * 3 + 4 * 3)
    assert base == pytest.approx(0.161 * 60.0 / (0.25 * surface))
    for k in (0.5, 2.0, 3.0):
        scaled = sabine_rt60(uniform_room(tuple(k * dims), 0.25), band=3)
        assert scaled == pytest.approx(k * base)


def test_material_weights_two_paths():
    """Bounce weights are intensity-weighted mean bounce counts per band."""
    from scripts.echorec.acoustics import material_weights

    direct = np.full(9, 4.0)
    direct[1] = 1.0
    reflected = np.full(9, 1.0)
    reflected[1] = 3.0
    direct[8] = reflected[8] = 0.0
    intensities = np.stack([direct, reflected])
    bounces = np.array([[0, 0], [1, 2]])

    w = material_weights(intensities, bounces, ("glass", "painted"))

    assert w.materials == ("glass", "painted")
    assert w.weights.shape == (9, 2)
    assert np.allclose(w.weights[0], [0.2, 0.4])
    assert np.allclose(w.weights[1], [0.75, 1.5])
    assert np.allclose(w.weights[8], [0.0, 0.0])


def test_synthesize_ir_rejects_bad_poses():
    """Positions outside the room or a coincident pair raise GeometryError."""
    from scripts.echorec.acoustics import synthesize_ir
    from scripts.echorec.errors import GeometryError
    from scripts.echorec.scene import SourceReceiver, uniform_room

    room = uniform_room((5.0, 4.0, 3.0), 0.2)
    with pytest.raises(GeometryError):
        synthesize_ir(room, SourceReceiver((6.0, 1.0, 1.0), (1.0, 1.0, 1.0)))
    with pytest.raises(GeometryError):
        synthesize_ir(room, SourceReceiver((1.0, 1.0, 1.0), (1.0, 1.0, 1.0)))


def test_rt60_tail_is_late_and_seeded():
    """The diffuse tail adds late taps and repeats for a fixed seed."""
    from scripts.echorec.acoustics import LATE, synthesize_ir
    from scripts.echorec.scene import SourceReceiver, uniform_room

    room = uniform_room((5.0, 4.0, 3.0), 0.2)
    pose = SourceReceiver.stacked((2.0, 2.0, 1.5))
    plain, _ = synthesize_ir(room, pose, order=2)
    first, _ = synthesize_ir(room, pose, order=2, rt60_tail=True, seed=3)
    second, _ = synthesize_ir(room, pose, order=2, rt60_tail=True, seed=3)

    assert len(first) > len(plain)
    assert np.sum(first.kinds == LATE) > np.sum(plain.kinds == LATE)
    assert np.array_equal(first.intensities, second.intensities)


def test_rt60_tail_zero_absorption():
    """A tail cannot be built for a perfectly reflective room."""
    from scripts.echorec.acoustics import synthesize_ir
    from scripts.echorec.errors import ZeroAbsorptionError
    from scripts.echorec.scene import SourceReceiver, uniform_room

    room = uniform_room((5.0, 4.0, 3.0), 0.0)
    with pytest.raises(ZeroAbsorptionError):
        synthesize_ir(room, SourceReceiver.stacked((2.0, 2.0, 1.5)), rt60_tail=True)


def test_impulse_response_save_load(tmp_path):
    """Impulse responses survive the npz archive."""
    from scripts.echorec.acoustics import ImpulseResponse, synthesize_ir
    from scripts.echorec.scene import SourceReceiver, uniform_room

    room = uniform_room((4.0, 4.0, 3.0), 0.3)
    ir, _ = synthesize_ir(room, SourceReceiver.stacked((1.0, 1.0, 1.0)))
    ir.save(tmp_path / "ir.npz")
    loaded = ImpulseResponse.load(tmp_path / "ir.npz")

    assert np.array_equal(loaded.delays, ir.delays)
    assert np.array_equal(loaded.bounce_counts, ir.bounce_counts)
    assert loaded.materials == ir.materials


def test_octave_band_masks_sum_to_one():
    """Band masks partition the spectrum."""
    from scripts.echorec.acoustics import octave_band_masks

    masks = octave_band_masks(4096)
    assert masks.shape == (9, 2049)
    assert np.allclose(masks.sum(axis=0), 1.0)


def test_render_echo_unit_tap_is_identity():
    """Rendering through a single direct tap returns the excitation."""
    from scripts.echorec.acoustics import ImpulseResponse, render_echo
    from scripts.echorec.dsp import PulseSpec, generate_source
    from scripts.echorec.scene import open_room

    excitation = generate_source(PulseSpec("puretone", 1000.0))
    room = open_room((3.0, 3.0, 3.0))
    out = render_echo(ImpulseResponse.single_tap(), excitation, room, "closed", noise=False)

    assert len(out) == 44100
    assert np.allclose(out.samples, excitation.samples, atol=1e-9)


def test_render_echo_rate_mismatch():
    """Excitation and impulse response must share a sample rate."""
    from scripts.echorec.acoustics import ImpulseResponse, render_echo
    from scripts.echorec.dsp import Waveform
    from scripts.echorec.errors import SampleRateMismatchError
    from scripts.echorec.scene import open_room

    room = open_room((3.0, 3.0, 3.0))
    with pytest.raises(SampleRateMismatchError):
        render_echo(ImpulseResponse.single_tap(), Waveform(np.zeros(100), 22050), room, "open")


def test_render_echo_requires_window_state():
    """The recording state is mandatory and must be open or closed."""
    from scripts.echorec.acoustics import ImpulseResponse, render_echo
    from scripts.echorec.dsp import Waveform
    from scripts.echorec.scene import open_room

    room = open_room((3.0, 3.0, 3.0))
    silence = Waveform(np.zeros(44100))
    with pytest.raises(ValueError):
        render_echo(ImpulseResponse.single_tap(), silence, room, "ajar")  # type: ignore[arg-type]
    with pytest.raises(TypeError):
        render_echo(ImpulseResponse.single_tap(), silence, room)  # type: ignore[call-arg]


def test_render_echo_noise_is_quieter_when_closed():
    """Closing the exterior window lowers the noise floor by 10 dB."""
    from scripts.echorec.acoustics import ImpulseResponse, render_echo
    from scripts.echorec.dsp import Waveform
    from scripts.echorec.scene import load_scene

    room = load_scene(SCENES / "window_sweep.conf").room
    silence = Waveform(np.zeros(44100))
    ir = ImpulseResponse.single_tap()
    opened = render_echo(ir, silence, room, window_state="open", seed=1)
    closed = render_echo(ir, silence, room, window_state="closed", seed=1)

    def rms(x):
        return float(np.sqrt(np.mean(x.samples**2)))

    assert rms(opened) == pytest.approx(0.8 * 10 ** (-30 / 20), rel=1e-6)
    assert rms(opened) / rms(closed) == pytest.approx(10**0.5, rel=1e-6)


def test_build_room_rejects_overlapping_panels():
    """Cut-out panels on the same wall may not overlap."""
    from scripts.echorec.errors import GeometryError
    from scripts.echorec.scene import WALLS, MaterialSpec, build_room, make_panel

    dims = (5.0, 4.0, 3.0)
    glass = MaterialSpec.from_library("glass")
    painted = MaterialSpec.from_library("painted")
    panels = [
        make_panel("a", "x1", (0.0, 0.0, 2.0, 2.0), dims, glass),
        make_panel("b", "x1", (1.0, 1.0, 3.0, 2.5), dims, glass),
    ]
    with pytest.raises(GeometryError):
        build_room(dims, {w: painted for w in WALLS}, panels)


def test_unknown_material():
    """Library lookups fail loudly for unknown names."""
    from scripts.echorec.errors import UnknownMaterialError
    from scripts.echorec.scene import MaterialSpec

    with pytest.raises(UnknownMaterialError):
        MaterialSpec.from_library("unobtainium")
