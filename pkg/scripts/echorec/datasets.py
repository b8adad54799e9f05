"""Synthetic labeled datasets: sweep generation, manifests, splits and reflection labels.

A sweep places the device in front of a scene's target panel at every depth class, swaps
the panel's material and open/closed state, and renders every source with every noise
seed. Each rendered frame becomes one example (a spectrogram feature file, a proxy image
and its labels) listed in a line-delimited manifest.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, NamedTuple

import numpy as np
from joblib import Parallel, delayed

from .acoustics import ImpulseResponse, render_echo, synthesize_ir
from .config import (
    DEFAULT_DEPTHS_M,
    HELD_OUT_SOURCES,
    MATERIAL_CLASSES,
    SAMPLE_RATE,
    TRAIN_SOURCES,
    as_floats,
    as_strings,
    load_config,
    section,
    worker_count,
)
from .dsp import (
    MelFilterbank,
    PulseSpec,
    StftConfig,
    frame_split,
    generate_source,
    mel_spectrogram,
    read_feature,
    write_feature,
)
from .echonet.train import TrainingSet
from .errors import (
    ConfigError,
    DatasetSanityError,
    EchoRecError,
    EmptyPartitionError,
    MissingIRError,
    UnknownMaterialError,
)
from .scene import (
    WALLS,
    MaterialSpec,
    Scene,
    ShoeboxRoom,
    SourceReceiver,
    load_scene,
    scene_from_config,
)
from .wavio import concatenate

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
TASKS = ("open_closed", "depth", "material")
IMAGE_SHAPE = (64, 25)

# Proxy image statistics per material class: base luminance and stripe frequency
# (cycles across the image width).
IMAGE_STYLE: dict[str, tuple[float, float]] = {
    "glass": (0.25, 2.0),
    "mirror": (0.75, 5.0),
    "other": (0.5, 9.0),
}


# =============================================================================
# Proxy images
# =============================================================================


def synth_image(material: str, state: str, seed: int) -> np.ndarray:
    """Procedural ``64 x 25`` grayscale stand-in for a cropped video frame.

    Each material has its own base luminance and stripe frequency; open surfaces show a
    vertical brightness gradient. Values lie in [0, 1] and depend only on the inputs.
    """
    if material not in IMAGE_STYLE:
        raise UnknownMaterialError(f"unknown material class {material!r}")
    if state not in ("open", "closed"):
        raise ValueError(f"state must be 'open' or 'closed', got {state!r}")
    base, cycles = IMAGE_STYLE[material]
    rows, cols = IMAGE_SHAPE
    rng = np.random.default_rng(
        [seed, list(IMAGE_STYLE).index(material), 0 if state == "closed" else 1]
    )
    x = np.arange(cols) / cols
    stripes = 0.12 * np.sin(2 * np.pi * cycles * x + rng.uniform(0, 2 * np.pi))
    grid = base + np.tile(stripes, (rows, 1))
    if state == "open":
        grid += np.linspace(0.08, -0.08, rows)[:, None]
    grid += rng.normal(0.0, 0.03, size=IMAGE_SHAPE)
    return np.clip(grid, 0.0, 1.0)


# =============================================================================
# Sweep configuration
# =============================================================================


@dataclass(frozen=True)
class SweepConfig:
    """Cartesian product generated by :func:`generate_dataset`."""

    scenes: tuple[Scene, ...]
    depths: tuple[float, ...] = DEFAULT_DEPTHS_M
    materials: tuple[str, ...] = tuple(MATERIAL_CLASSES)
    states: tuple[str, ...] = ("open", "closed")
    sources: tuple[str, ...] = TRAIN_SOURCES + HELD_OUT_SOURCES
    seeds: int = 1
    order: int = 3
    rt60_tail: bool = False
    frames_per_cell: int = 1
    images: bool = True
    keep_ir: bool = True
    vertical_offset: float = 0.07

    def __post_init__(self) -> None:
        """Check sweep dimensions."""
        if not self.scenes:
            raise ConfigError("sweep needs at least one scene")
        if len(self.depths) < 2 or any(d <= 0 for d in self.depths):
            raise ConfigError("sweep needs at least two positive depth classes")
        for material in self.materials:
            if material not in MATERIAL_CLASSES:
                raise UnknownMaterialError(f"unknown material class {material!r}")
        for state in self.states:
            if state not in ("open", "closed"):
                raise ConfigError(f"unknown state {state!r}")
        for source in self.sources:
            PulseSpec.from_name(source)
        if self.seeds < 1 or self.frames_per_cell < 1:
            raise ConfigError("seeds and frames_per_cell must be at least 1")

    def describe(self) -> dict[str, Any]:
        """Plain description used for the manifest hash."""
        data: dict[str, Any] = {
            f.name: getattr(self, f.name) for f in fields(self) if f.name != "scenes"
        }
        data["scenes"] = [
            {"name": s.name, "target_panel": s.target_panel, "room": repr(s.room)}
            for s in self.scenes
        ]
        return data

    @property
    def n_cells(self) -> int:
        """Number of acoustic cells (scene, depth, material, state)."""
        return len(self.scenes) * len(self.depths) * len(self.materials) * len(self.states)


def sweep_from_config(config: dict[str, Any], base_dir: Path | None = None) -> SweepConfig:
    """Build a sweep from a parsed config; ``[sweep] scenes`` lists extra scene files.

    Without a ``scenes`` key the config itself is the (single) scene.
    """
    sweep = section(config, "sweep")
    if "scenes" in sweep:
        base_dir = base_dir or Path(".")
        scenes = tuple(load_scene(base_dir / name) for name in as_strings(sweep["scenes"]))
    else:
        scenes = (scene_from_config(config, name=str(config.get("name", "scene"))),)
    kwargs: dict[str, Any] = {}
    if "depths" in sweep:
        kwargs["depths"] = tuple(as_floats(sweep["depths"], name="depths"))
    for key in ("materials", "states", "sources"):
        if key in sweep:
            kwargs[key] = tuple(as_strings(sweep[key]))
    for key in ("seeds", "order", "frames_per_cell"):
        if key in sweep:
            kwargs[key] = int(sweep[key])
    for key in ("rt60_tail", "images", "keep_ir"):
        if key in sweep:
            kwargs[key] = bool(sweep[key])
    if "vertical_offset" in sweep:
        kwargs["vertical_offset"] = float(sweep["vertical_offset"])
    return SweepConfig(scenes=scenes, **kwargs)


def load_sweep(path: Path) -> SweepConfig:
    """Load a sweep config file."""
    return sweep_from_config(load_config(path), base_dir=path.parent)


# =============================================================================
# Manifest
# =============================================================================


@dataclass(frozen=True)
class LabeledExample:
    """One frame with its file references (relative to the manifest) and labels."""

    example_id: str
    spectrogram: str
    image: str | None
    open_closed: str
    depth: float
    material: str
    source_kind: str
    scene: str
    seed: int
    frame: int = 0
    ir: str | None = None
    split: str = "train"

    def label(self, task: str) -> str:
        """Class name of this example for a task."""
        if task == "open_closed":
            return self.open_closed
        if task == "depth":
            return f"{self.depth:g}"
        if task == "material":
            return self.material
        raise ValueError(f"unknown task {task!r}")


@dataclass
class DatasetManifest:
    """Schema-versioned list of examples plus the class maps they draw from."""

    examples: list[LabeledExample]
    depths: tuple[float, ...]
    materials: tuple[str, ...]
    states: tuple[str, ...] = ("open", "closed")
    config_hash: str = ""
    schema_version: int = SCHEMA_VERSION
    root: Path = field(default_factory=lambda: Path("."), compare=False)

    def __post_init__(self) -> None:
        """Check class-map consistency."""
        for ex in self.examples:
            if ex.depth not in self.depths:
                raise DatasetSanityError(f"{ex.example_id}: depth {ex.depth} not in the depth grid")
            if ex.material not in self.materials or ex.open_closed not in self.states:
                raise DatasetSanityError(f"{ex.example_id}: label outside the class maps")

    def class_names(self, task: str) -> list[str]:
        """Class names of a task, in label-index order."""
        if task == "open_closed":
            return list(self.states)
        if task == "depth":
            return [f"{d:g}" for d in self.depths]
        if task == "material":
            return list(self.materials)
        raise ValueError(f"unknown task {task!r}")

    def label_index(self, example: LabeledExample, task: str) -> int:
        """Integer label of an example."""
        return self.class_names(task).index(example.label(task))

    def resolve(self, ref: str) -> Path:
        """Absolute path of a file reference."""
        return self.root / ref

    def save(self, path: Path) -> None:
        """Write the header line then one example per line."""
        header = {
            "schema_version": self.schema_version,
            "config_hash": self.config_hash,
            "class_maps": {
                "depths": list(self.depths),
                "materials": list(self.materials),
                "states": list(self.states),
            },
        }
        lines = [json.dumps(header, sort_keys=True)]
        lines += [json.dumps(asdict(ex), sort_keys=True) for ex in self.examples]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: Path) -> DatasetManifest:
        """Read a manifest written by :meth:`save`."""
        path = Path(path)
        try:
            lines = [line for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]
        except OSError as e:
            raise ConfigError(f"cannot read manifest {path}: {e}") from e
        if not lines:
            raise ConfigError(f"{path}: empty manifest")
        try:
            header = json.loads(lines[0])
            if header.get("schema_version") != SCHEMA_VERSION:
                raise DatasetSanityError(
                    f"{path}: manifest schema {header.get('schema_version')} is not supported"
                )
            maps = header["class_maps"]
            examples = [LabeledExample(**json.loads(line)) for line in lines[1:]]
        except (ValueError, KeyError, TypeError) as e:
            raise ConfigError(f"{path}: malformed manifest: {e}") from e
        return cls(
            examples=examples,
            depths=tuple(float(d) for d in maps["depths"]),
            materials=tuple(maps["materials"]),
            states=tuple(maps["states"]),
            config_hash=str(header.get("config_hash", "")),
            root=path.parent,
        )


# =============================================================================
# Generation
# =============================================================================


class CellFailure(NamedTuple):
    """A sweep cell the simulator rejected."""

    cell_id: str
    message: str


class GenerationResult(NamedTuple):
    """Manifest plus the cells that failed."""

    manifest: DatasetManifest
    failures: list[CellFailure]
    manifest_path: Path


def cell_pose(room: ShoeboxRoom, panel_id: str, depth: float, offset: float) -> SourceReceiver:
    """Device ``depth`` meters in front of a panel's center, receiver stacked above."""
    panel = room.panel(panel_id)
    axis, side, _ = WALLS[panel.wall]
    center = panel.corners.mean(axis=0)
    position = center.copy()
    position[axis] = depth if side == 0 else room.dims[axis] - depth
    pose = SourceReceiver.stacked(tuple(float(p) for p in position), offset)
    pose.check_inside(room)
    return pose


def target_reflection_delay(room: ShoeboxRoom, panel_id: str, pose: SourceReceiver) -> float:
    """Arrival time of the first-order reflection off the panel's wall."""
    axis, side, _ = WALLS[room.panel(panel_id).wall]
    image = np.asarray(pose.source_pos, dtype=float)
    plane = room.dims[axis] * side
    image[axis] = 2 * plane - image[axis]
    return float(np.linalg.norm(image - np.asarray(pose.receiver_pos)) / room.speed_of_sound)


def check_depth_separability(
    delays: dict[float, float], rate: int = SAMPLE_RATE, speed_of_sound: float = 343.0
) -> None:
    """Adjacent depth classes must be at least ``2 * spacing / c`` apart (less one sample)."""
    ordered = sorted(delays)
    for near, far in zip(ordered, ordered[1:]):
        gap = delays[far] - delays[near]
        needed = 2 * (far - near) / speed_of_sound - 1.0 / rate
        if gap < needed:
            raise DatasetSanityError(
                f"depths {near:g} m and {far:g} m are only {gap * 1000:.2f} ms apart"
            )
        logger.debug("depths %g/%g m: reflection gap %.2f ms", near, far, gap * 1000)


def _cell_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


def _render_cell(
    sweep: SweepConfig,
    out_dir: Path,
    seed: int,
    cell_index: int,
    scene: Scene,
    depth: float,
    material: str,
    state: str,
) -> tuple[list[LabeledExample], CellFailure | None]:
    cell_id = f"{scene.name}_d{depth:g}_{material}_{state}"
    try:
        if scene.room is None or scene.target_panel is None:
            raise ConfigError(f"scene {scene.name!r} needs a [room] and a [sweep] target_panel")
        room = scene.room.with_panel(
            scene.target_panel, MaterialSpec.from_library(MATERIAL_CLASSES[material]), state
        )
        pose = cell_pose(room, scene.target_panel, depth, sweep.vertical_offset)
        ir, _ = synthesize_ir(
            room, pose, sweep.order, sweep.rt60_tail, seed=_cell_seed(seed, cell_index)
        )
        ir_ref = None
        if sweep.keep_ir:
            ir_ref = f"irs/{cell_id}.npz"
            ir.save(out_dir / ir_ref)

        stft_cfg = StftConfig()
        fb = MelFilterbank.build(stft_cfg)
        examples = []
        for source_index, source in enumerate(sweep.sources):
            for noise_index in range(sweep.seeds):
                noise_seed = _cell_seed(seed, cell_index, source_index, noise_index)
                excitation = generate_source(PulseSpec.from_name(source), seed=noise_seed)
                periods = [
                    render_echo(ir, excitation, room, state, seed=noise_seed + period)
                    for period in range(sweep.frames_per_cell)
                ]
                image_ref = None
                if sweep.images:
                    image_ref = f"images/{cell_id}_s{noise_index}.feat"
                    write_feature(out_dir / image_ref, synth_image(material, state, noise_seed))
                for frame_index, frame in enumerate(frame_split(concatenate(periods))):
                    example_id = f"{cell_id}_{source}_s{noise_index}_f{frame_index}"
                    spec_ref = f"features/{example_id}.feat"
                    write_feature(
                        out_dir / spec_ref, mel_spectrogram(frame, stft_cfg, fb, example_id).grid
                    )
                    examples.append(
                        LabeledExample(
                            example_id=example_id,
                            spectrogram=spec_ref,
                            image=image_ref,
                            open_closed=state,
                            depth=depth,
                            material=material,
                            source_kind=source,
                            scene=scene.name,
                            seed=noise_seed,
                            frame=frame_index,
                            ir=ir_ref,
                            split="test" if source in HELD_OUT_SOURCES else "train",
                        )
                    )
        return examples, None
    except EchoRecError as e:
        logger.warning("cell %s failed: %s", cell_id, e)
        return [], CellFailure(cell_id, str(e))


def generate_dataset(sweep: SweepConfig, out_dir: Path, seed: int = 0) -> GenerationResult:
    """Render every sweep cell into ``out_dir`` and write ``manifest.jsonl``.

    Cells run in parallel (``ECHOREC_THREADS`` workers); the manifest lists examples in
    sweep order regardless of completion order. Failed cells are reported, not raised.
    """
    out_dir = Path(out_dir)
    for sub in ("features", "images", "irs"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)

    cells = [
        (scene, depth, material, state)
        for scene in sweep.scenes
        for depth in sweep.depths
        for material in sweep.materials
        for state in sweep.states
    ]
    _check_sweep_geometry(sweep)

    outputs = Parallel(n_jobs=worker_count(), prefer="threads")(
        delayed(_render_cell)(sweep, out_dir, seed, i, *cell) for i, cell in enumerate(cells)
    )
    examples = [ex for cell_examples, _ in outputs for ex in cell_examples]
    failures = [failure for _, failure in outputs if failure is not None]

    digest = hashlib.sha256(
        json.dumps({"sweep": sweep.describe(), "seed": seed}, sort_keys=True, default=str).encode()
    ).hexdigest()
    manifest = DatasetManifest(
        examples=examples,
        depths=tuple(sweep.depths),
        materials=tuple(sweep.materials),
        states=tuple(sweep.states),
        config_hash=digest,
        root=out_dir,
    )
    manifest_path = out_dir / "manifest.jsonl"
    manifest.save(manifest_path)
    logger.info(
        "generated %d examples from %d cells (%d failed)", len(examples), len(cells), len(failures)
    )
    return GenerationResult(manifest, failures, manifest_path)


def _check_sweep_geometry(sweep: SweepConfig) -> None:
    for scene in sweep.scenes:
        if scene.room is None or scene.target_panel is None:
            continue
        delays = {}
        for depth in sweep.depths:
            try:
                pose = cell_pose(scene.room, scene.target_panel, depth, sweep.vertical_offset)
            except EchoRecError:
                continue
            delays[depth] = target_reflection_delay(scene.room, scene.target_panel, pose)
        check_depth_separability(delays, speed_of_sound=scene.room.speed_of_sound)


# =============================================================================
# Splits and arrays
# =============================================================================


@dataclass(frozen=True)
class SplitSpec:
    """Held-out sources go to test; a seeded fraction of the rest becomes validation."""

    held_out_sources: tuple[str, ...] = HELD_OUT_SOURCES
    val_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        """Validate the held-out set and fraction."""
        if not self.held_out_sources:
            raise ConfigError("held-out source set must not be empty")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in [0, 1)")


class Partitions(NamedTuple):
    """Disjoint example lists."""

    train: list[LabeledExample]
    val: list[LabeledExample]
    test: list[LabeledExample]


def split(manifest: DatasetManifest, spec: SplitSpec) -> Partitions:
    """Partition examples by source; the manifest order is kept inside each partition."""
    held = set(spec.held_out_sources)
    test = [ex for ex in manifest.examples if ex.source_kind in held]
    seen = [ex for ex in manifest.examples if ex.source_kind not in held]
    n_val = int(round(len(seen) * spec.val_fraction))
    chosen = set(np.random.default_rng(spec.seed).permutation(len(seen))[:n_val].tolist())
    val = [replace(ex, split="val") for i, ex in enumerate(seen) if i in chosen]
    train = [replace(ex, split="train") for i, ex in enumerate(seen) if i not in chosen]
    test = [replace(ex, split="test") for ex in test]
    if not train:
        raise EmptyPartitionError("no training examples after holding out sources")
    if not test:
        raise EmptyPartitionError(f"no examples use the held-out sources {sorted(held)}")
    return Partitions(train, val, test)


def load_arrays(
    manifest: DatasetManifest, examples: list[LabeledExample], task: str, with_images: bool = False
) -> TrainingSet:
    """Read feature files into stacked arrays with integer labels."""
    audio = None
    if examples:
        audio = np.stack([read_feature(manifest.resolve(ex.spectrogram)) for ex in examples])
    images = None
    if with_images:
        if any(ex.image is None for ex in examples):
            raise DatasetSanityError("dataset was generated without images")
        images = np.stack([read_feature(manifest.resolve(str(ex.image))) for ex in examples])
    labels = np.array([manifest.label_index(ex, task) for ex in examples], dtype=np.int64)
    return TrainingSet(audio, images, labels)


# =============================================================================
# Reflection labels
# =============================================================================


class ReflectionLabel(NamedTuple):
    """Band-summed tap energy by kind for one example."""

    example_id: str
    direct: float
    early: float
    late: float

    @property
    def total(self) -> float:
        """Sum over kinds."""
        return self.direct + self.early + self.late


def export_reflection_labels(manifest: DatasetManifest) -> list[ReflectionLabel]:
    """Direct/early/late energy per example, read from the retained impulse responses."""
    labels = []
    cache: dict[str, dict[str, float]] = {}
    for ex in manifest.examples:
        if ex.ir is None:
            raise MissingIRError(f"{ex.example_id}: generated without impulse responses")
        if ex.ir not in cache:
            path = manifest.resolve(ex.ir)
            if not path.exists():
                raise MissingIRError(f"{ex.example_id}: {path} not found")
            cache[ex.ir] = ImpulseResponse.load(path).kind_energy()
        energy = cache[ex.ir]
        labels.append(
            ReflectionLabel(ex.example_id, energy["direct"], energy["early"], energy["late"])
        )
    return labels


def write_reflection_labels(labels: list[ReflectionLabel], path: Path) -> None:
    """One JSON object per example."""
    lines = [json.dumps(label._asdict(), sort_keys=True) for label in labels]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
