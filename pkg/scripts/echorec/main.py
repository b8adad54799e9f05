"""Main entry point for the echorec command line."""

import argparse
import json
import logging
import sys
from collections.abc import Callable
from pathlib import Path
from typing import Any

import numpy as np

from .acoustics import sabine_rt60, total_absorption
from .baselines import KnnClassifier, SvmConfig, svm_classify, svm_train
from .config import OCTAVE_BANDS_HZ, apply_overrides, as_strings, load_config, parse_args, section
from .datasets import (
    DatasetManifest,
    SplitSpec,
    export_reflection_labels,
    generate_dataset,
    load_arrays,
    split,
    sweep_from_config,
    write_reflection_labels,
)
from .dsp import frame_split, mel_spectrogram, read_feature, write_feature
from .echonet.checkpoint import load_checkpoint, save_checkpoint
from .echonet.model import classify_frames, model_config_from_section, predict
from .echonet.train import TrainConfig, activation_maximization, train
from .errors import (
    DivisionByZeroError,
    EchoRecError,
    EmptyDatasetError,
    EmptyResultError,
    EmptyTestSetError,
    HullDegenerateError,
    InvalidDistributionError,
    MissingIRError,
    NonPositiveFrequencyError,
    TooShortError,
    ZeroAbsorptionError,
)
from .mesh.enhance import EnhanceConfig, enhance, load_classifications
from .mesh.obj import load_obj, save_obj
from .metrics import (
    Metrics,
    Predictor,
    evaluate,
    format_report,
    metrics_record,
    write_confusion_csv,
)
from .scene import M3_TO_FT3, load_scene
from .wavio import read_wav

logger = logging.getLogger(__name__)

# Default model/train/split/enhance settings live beside the package:
# scripts/echorec/main.py -> scripts/echorec.conf
DEFAULT_CONFIG = Path(__file__).parent.parent / "echorec.conf"

EXIT_OK, EXIT_USAGE, EXIT_PARTIAL, EXIT_NUMERIC = 0, 1, 2, 3

# Errors not listed here map to EXIT_USAGE.
EXIT_CODES: dict[type[Exception], int] = {
    MissingIRError: EXIT_PARTIAL,
    EmptyDatasetError: EXIT_PARTIAL,
    EmptyTestSetError: EXIT_PARTIAL,
    EmptyResultError: EXIT_PARTIAL,
    ZeroAbsorptionError: EXIT_NUMERIC,
    DivisionByZeroError: EXIT_NUMERIC,
    NonPositiveFrequencyError: EXIT_NUMERIC,
    InvalidDistributionError: EXIT_NUMERIC,
    HullDegenerateError: EXIT_NUMERIC,
}

RULE = "=" * 70


def exit_code_for(error: Exception) -> int:
    """Exit code for an error, looked up along its class hierarchy."""
    for cls in type(error).__mro__:
        if cls in EXIT_CODES:
            return EXIT_CODES[cls]
    return EXIT_USAGE


def load_settings(path: Path | None, overrides: list[str]) -> dict[str, Any]:
    """Config file (the packaged default when ``path`` is None) with overrides applied."""
    config = load_config(path or DEFAULT_CONFIG)
    return apply_overrides(config, overrides)


def split_spec(settings: dict[str, Any], seed: int) -> SplitSpec:
    """Held-out sources from the ``[split]`` section."""
    values = section(settings, "split")
    kwargs: dict[str, Any] = {"seed": seed}
    if "held_out_sources" in values:
        kwargs["held_out_sources"] = tuple(as_strings(values["held_out_sources"]))
    return SplitSpec(**kwargs)


# =============================================================================
# Commands
# =============================================================================


def cmd_simulate(args: argparse.Namespace) -> int:
    """Generate a dataset from a sweep config."""
    config = apply_overrides(load_config(args.config), args.overrides)
    sweep = sweep_from_config(config, base_dir=args.config.parent)

    print(f"Simulating sweep from {args.config}...")
    print(
        f"Cells: {sweep.n_cells} ({len(sweep.scenes)} scenes x {len(sweep.depths)} depths x "
        f"{len(sweep.materials)} materials x {len(sweep.states)} states), "
        f"{len(sweep.sources)} sources x {sweep.seeds} seeds each"
    )
    print(RULE)

    result = generate_dataset(sweep, args.out_dir, seed=args.seed)
    for failure in result.failures:
        print(f"  [ERR] {failure.cell_id:<40} {failure.message}")

    if sweep.keep_ir and result.manifest.examples:
        labels = export_reflection_labels(result.manifest)
        write_reflection_labels(labels, Path(args.out_dir) / "reflections.jsonl")

    print(RULE)
    print(
        f"Total: {len(result.manifest.examples)} examples from {sweep.n_cells} cells "
        f"({len(result.failures)} failed)"
    )
    print(f"Manifest: {result.manifest_path}")
    if result.failures:
        print(f"\nPARTIAL: {len(result.failures)} cells failed.")
        return EXIT_PARTIAL
    print("\nSUCCESS: All cells rendered.")
    return EXIT_OK


def cmd_featurize(args: argparse.Namespace) -> int:
    """Write one spectrogram feature file per 1 s frame of a recording."""
    recording = read_wav(args.wav)
    frames = frame_split(recording)
    if not frames:
        raise TooShortError(f"{args.wav} is shorter than one frame")
    args.out_dir.mkdir(parents=True, exist_ok=True)

    print(f"Featurizing {args.wav} ({recording.duration:.2f} s)...")
    print(RULE)
    for index, frame in enumerate(frames):
        frame_id = f"{args.wav.stem}_f{index}"
        path = args.out_dir / f"{frame_id}.feat"
        write_feature(path, mel_spectrogram(frame, frame_id=frame_id).grid)
        print(f"  [OK] {frame_id:<40} -> {path.name}")
    print(RULE)
    print(f"Total: {len(frames)} frames")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    """Train a classifier for one task on the manifest's training partition."""
    settings = load_settings(args.model_config, args.overrides)
    manifest = DatasetManifest.load(args.manifest)
    parts = split(manifest, split_spec(settings, args.seed))
    names = manifest.class_names(args.task)
    config = model_config_from_section(section(settings, "model"), n_classes=len(names))
    data = load_arrays(manifest, parts.train, args.task, with_images=config.uses_image)
    train_cfg = TrainConfig.from_section(section(settings, "train"), seed=args.seed)

    print(
        f"Training {config.modality} model for task '{args.task}' "
        f"on {len(data.labels)} examples..."
    )
    print(f"Classes: {', '.join(names)}; merge: {config.merge}; epochs: {train_cfg.epochs}")
    print(RULE)
    checkpoint = train(
        config,
        data,
        train_cfg,
        metadata={
            "task": args.task,
            "class_names": names,
            "manifest_hash": manifest.config_hash,
        },
    )
    train_loss = checkpoint.metadata["train_loss"]
    val_loss = checkpoint.metadata["val_loss"]
    for epoch, loss in enumerate(train_loss):
        val = f"  val {val_loss[epoch]:.5f}" if epoch < len(val_loss) else ""
        print(f"  epoch {epoch + 1:>4}  train {loss:.5f}{val}")
    save_checkpoint(checkpoint, args.checkpoint)
    print(RULE)
    final = f"{train_loss[-1]:.5f}" if train_loss else "n/a"
    n_params = sum(v.size for _, v in checkpoint.parameters)
    print(f"Total: {n_params} parameters, final train loss {final}")
    print(f"Checkpoint: {args.checkpoint}")
    return EXIT_OK


def _predictor(
    args: argparse.Namespace, manifest: DatasetManifest, train_examples: list, task: str
) -> tuple[Predictor, str, bool]:
    if args.checkpoint:
        checkpoint = load_checkpoint(args.checkpoint)
        model = checkpoint.to_model()
        stored_task = checkpoint.metadata.get("task", task)
        if stored_task != task:
            raise EchoRecError(f"checkpoint was trained for '{stored_task}', not '{task}'")
        label = f"checkpoint {args.checkpoint.name}"
        return (lambda ts: predict(model, ts.audio, ts.images)[0]), label, model.config.uses_image
    if args.baseline is None:
        raise EchoRecError("eval needs --checkpoint or --baseline")

    train_set = load_arrays(manifest, train_examples, task)
    if args.baseline == "knn":
        knn = KnnClassifier(k=args.k).fit(train_set.audio, train_set.labels)
        return (lambda ts: knn.predict(ts.audio)), f"kNN (k={args.k})", False
    n_classes = len(manifest.class_names(task))
    svm = svm_train(train_set.audio, train_set.labels, n_classes, SvmConfig(seed=args.seed))
    return (lambda ts: svm_classify(svm, ts.audio)), "linear SVM", False


def _write_reports(report_dir: Path, metrics: Metrics, label: str, examples: list) -> None:
    report_dir.mkdir(parents=True, exist_ok=True)
    record = metrics_record(metrics, predictor=label)
    with open(report_dir / "metrics.jsonl", "w", encoding="utf-8") as f:
        f.write(json.dumps(record, sort_keys=True) + "\n")
    write_confusion_csv(metrics, report_dir / f"confusion_{metrics.task}.csv")
    rows = [
        json.dumps(
            {"example_id": ex.example_id, "predicted": metrics.class_names[int(p)]}, sort_keys=True
        )
        for ex, p in zip(examples, metrics.predictions)
    ]
    (report_dir / f"predictions_{metrics.task}.jsonl").write_text(
        "\n".join(rows) + "\n", encoding="utf-8"
    )


def cmd_eval(args: argparse.Namespace) -> int:
    """Score a checkpoint or a baseline on the held-out-source test partition."""
    settings = load_settings(None, args.overrides)
    manifest = DatasetManifest.load(args.manifest)
    parts = split(manifest, split_spec(settings, args.seed))
    predictor, label, with_images = _predictor(args, manifest, parts.train, args.task)
    test_set = load_arrays(manifest, parts.test, args.task, with_images=with_images)
    metrics = evaluate(predictor, test_set, args.task, manifest.class_names(args.task))

    print(format_report(metrics, title=f"Evaluating {label} on task '{args.task}'"))
    if args.report_dir:
        _write_reports(args.report_dir, metrics, label, parts.test)
        print(f"Reports: {args.report_dir}")
    return EXIT_OK


def cmd_infer(args: argparse.Namespace) -> int:
    """Print one JSON record per 1 s frame with every requested classification."""
    checkpoints = {
        task: path
        for task, path in (
            ("open_closed", args.open_closed),
            ("depth", args.depth),
            ("material", args.material),
        )
        if path is not None
    }
    if not checkpoints:
        raise EchoRecError("infer needs at least one of --open-closed, --depth, --material")

    frames = frame_split(read_wav(args.wav))
    if not frames:
        raise TooShortError(f"{args.wav} is shorter than one frame")
    frame_ids = [f"{args.wav.stem}_f{i}" for i in range(len(frames))]
    audio = np.stack([mel_spectrogram(f, frame_id=i).grid for f, i in zip(frames, frame_ids)])
    images = None
    if args.image is not None:
        images = np.repeat(read_feature(args.image)[None], len(frames), axis=0)

    records: list[dict[str, Any]] = [{"frame_id": frame_id} for frame_id in frame_ids]
    for task, path in checkpoints.items():
        checkpoint = load_checkpoint(path)
        model = checkpoint.to_model()
        for record, pred in zip(
            records,
            classify_frames(model, checkpoint.class_names, task, audio, images, frame_ids),
        ):
            record[task] = {"label": pred.label, "probability": round(pred.probability, 6)}
    for record in records:
        print(json.dumps(record, sort_keys=True))
    return EXIT_OK


def cmd_enhance(args: argparse.Namespace) -> int:
    """Repair an OBJ mesh with a classification file."""
    settings = load_settings(args.config, args.overrides)
    cfg = EnhanceConfig.from_section(section(settings, "enhance"))
    mesh = load_obj(args.obj)
    classifications = load_classifications(args.classifications)

    print(f"Enhancing {args.obj} with {len(classifications)} classifications...")
    print(RULE)
    result = enhance(mesh, classifications, cfg)
    for frame_id in result.filled:
        print(f"  [FILL] {frame_id}")
    for frame_id, reason in result.skipped:
        print(f"  [SKIP] {frame_id:<30} {reason}")
    for frame_id, message in result.errors:
        print(f"  [ERR]  {frame_id:<30} {message}")
    save_obj(result.mesh, args.out_obj)
    print(RULE)
    added = result.mesh.n_faces - mesh.n_faces
    print(
        f"Total: {result.mesh.n_vertices} vertices, {result.mesh.n_faces} faces "
        f"({added:+d} faces, {len(result.filled)} holes filled)"
    )
    if result.errors:
        print(f"\nPARTIAL: {len(result.errors)} classifications failed.")
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_actmax(args: argparse.Namespace) -> int:
    """Synthesize the input grid that most excites one class."""
    checkpoint = load_checkpoint(args.checkpoint)
    model = checkpoint.to_model()
    result = activation_maximization(model, args.class_index, iters=args.iters, step=args.step)
    write_feature(args.out, result.grid)

    name = checkpoint.class_names[args.class_index]
    print(f"Activation maximization for class {args.class_index} ({name})...")
    print(RULE)
    print(f"  start logit {result.trace[0]:>10.4f}")
    print(f"  final logit {result.trace[-1]:>10.4f}")
    print(RULE)
    print(f"Total: {len(result.trace) - 1} accepted steps; grid written to {args.out}")
    return EXIT_OK


def cmd_rt60(args: argparse.Namespace) -> int:
    """Print the Sabine reverberation time of a scene."""
    scene = load_scene(args.config)
    absorber = scene.absorber
    absorption = total_absorption(absorber, args.band, args.units)
    rt60 = sabine_rt60(absorber, args.band, args.units)
    if args.units == "imperial":
        volume, v_unit, a_unit = absorber.volume * M3_TO_FT3, "ft^3", "sabins"
    else:
        volume, v_unit, a_unit = absorber.volume, "m^3", "metric sabins"

    print(f"Sabine RT60 for {scene.name} ({OCTAVE_BANDS_HZ[args.band]:g} Hz band, {args.units})")
    print(RULE)
    print(f"  {'Volume:':<12} {volume:>10.2f} {v_unit}")
    print(f"  {'Absorption:':<12} {absorption:>10.2f} {a_unit}")
    print(RULE)
    print(f"Total: RT60 = {rt60:.2f} s")
    return EXIT_OK


COMMANDS: dict[str, Callable[[argparse.Namespace], int]] = {
    "simulate": cmd_simulate,
    "featurize": cmd_featurize,
    "train": cmd_train,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "enhance": cmd_enhance,
    "actmax": cmd_actmax,
    "rt60": cmd_rt60,
}


def report_error(error: Exception, json_errors: bool) -> int:
    """Print a one-line diagnostic (and optionally a JSON record) to stderr."""
    code = exit_code_for(error)
    print(f"error: {error}", file=sys.stderr)
    if json_errors:
        record = {"error": type(error).__name__, "message": str(error), "exit_code": code}
        print(json.dumps(record, sort_keys=True), file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    """Main entry point."""
    try:
        args = parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except (EchoRecError, OSError, ValueError) as e:
        logger.debug("command %s failed", args.command, exc_info=True)
        return report_error(e, args.json_errors)


if __name__ == "__main__":
    sys.exit(main())
