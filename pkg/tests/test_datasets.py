"""Tests for sweep generation, manifests, splits and reflection labels."""

from pathlib import Path

import numpy as np
import pytest

SCENES = Path(__file__).parent.parent / "scripts" / "scenes"


def _mini_sweep():
    from scripts.echorec.datasets import SweepConfig
    from scripts.echorec.scene import load_scene

    return SweepConfig(
        scenes=(load_scene(SCENES / "window_sweep.conf"),),
        depths=(1.0, 2.0),
        materials=("glass", "other"),
        states=("open", "closed"),
        sources=("clap", "chirp"),
        seeds=1,
        order=1,
    )


@pytest.fixture(scope="module")
def generated(tmp_path_factory):
    """A small dataset rendered once for the module."""
    from scripts.echorec.datasets import generate_dataset

    return generate_dataset(_mini_sweep(), tmp_path_factory.mktemp("mini"), seed=3)


def test_sweep_from_shipped_config():
    """The shipped sweep spans 6 depths x 3 materials x 2 states over the full palette."""
    from scripts.echorec.config import HELD_OUT_SOURCES, TRAIN_SOURCES
    from scripts.echorec.datasets import load_sweep

    sweep = load_sweep(SCENES / "window_sweep.conf")

    assert sweep.n_cells == 36
    assert sweep.depths == (0.5, 1.0, 1.5, 2.0, 2.5, 3.0)
    assert sweep.sources == TRAIN_SOURCES + HELD_OUT_SOURCES
    assert len(sweep.sources) == 14
    assert sweep.n_cells * len(sweep.sources) * sweep.seeds == 1008
    assert sweep.scenes[0].target_panel == "window"
    assert sweep.rt60_tail is True


def test_sweep_config_validation():
    """Unknown materials, states or sources and single depths are rejected."""
    from scripts.echorec.datasets import SweepConfig
    from scripts.echorec.errors import ConfigError, UnknownMaterialError, UnknownSourceKindError

    scenes = _mini_sweep().scenes
    with pytest.raises(ConfigError):
        SweepConfig(scenes=scenes, depths=(1.0,))
    with pytest.raises(UnknownMaterialError):
        SweepConfig(scenes=scenes, materials=("wood",))
    with pytest.raises(UnknownSourceKindError):
        SweepConfig(scenes=scenes, sources=("whistle",))
    with pytest.raises(ConfigError):
        SweepConfig(scenes=scenes, states=("ajar",))


def test_cell_pose_faces_target_panel():
    """The device sits depth meters in front of the panel center, receiver stacked."""
    from scripts.echorec.datasets import cell_pose, target_reflection_delay

    room = _mini_sweep().scenes[0].room
    pose = cell_pose(room, "window", 1.0, 0.07)

    assert pose.source_pos == pytest.approx((4.0, 2.0, 1.5))
    assert pose.receiver_pos == pytest.approx((4.0, 2.0, 1.57))
    expected = np.hypot(2.0, 0.07) / 343.0
    assert target_reflection_delay(room, "window", pose) == pytest.approx(expected)


def test_depth_separability_check():
    """Reflections of adjacent depth classes must arrive far enough apart."""
    from scripts.echorec.datasets import check_depth_separability
    from scripts.echorec.errors import DatasetSanityError

    check_depth_separability({1.0: 2.0 / 343.0, 1.5: 3.0 / 343.0})
    with pytest.raises(DatasetSanityError):
        check_depth_separability({1.0: 0.0100, 1.5: 0.0101})


def test_synth_image_properties():
    """Proxy images are 64 x 25, bounded, seeded and material-dependent."""
    from scripts.echorec.datasets import synth_image
    from scripts.echorec.errors import UnknownMaterialError

    glass = synth_image("glass", "closed", 1)
    assert glass.shape == (64, 25)
    assert glass.min() >= 0.0 and glass.max() <= 1.0
    assert np.array_equal(glass, synth_image("glass", "closed", 1))
    assert synth_image("mirror", "closed", 1).mean() > glass.mean() + 0.3
    opened = synth_image("glass", "open", 1)
    assert opened[:8].mean() > opened[-8:].mean()
    with pytest.raises(UnknownMaterialError):
        synth_image("wood", "closed", 1)


def test_generate_dataset_examples(generated):
    """Every cell renders one frame per source with labels and file references."""
    manifest = generated.manifest

    assert generated.failures == []
    assert len(manifest.examples) == 16
    assert generated.manifest_path.name == "manifest.jsonl"
    first = manifest.examples[0]
    assert first.example_id == "livingroom_d1_glass_open_clap_s0_f0"
    assert first.split == "train"
    assert manifest.resolve(first.spectrogram).exists()
    assert manifest.resolve(first.image).exists()
    assert manifest.resolve(first.ir).exists()
    assert {ex.split for ex in manifest.examples if ex.source_kind == "chirp"} == {"test"}
    assert manifest.class_names("depth") == ["1", "2"]


def test_generate_dataset_is_reproducible(generated, tmp_path):
    """The same sweep and seed reproduce the manifest hash and feature bytes."""
    from scripts.echorec.datasets import generate_dataset

    again = generate_dataset(_mini_sweep(), tmp_path, seed=3)
    ref = again.manifest.examples[5].spectrogram

    assert again.manifest.config_hash == generated.manifest.config_hash
    assert again.manifest.examples == generated.manifest.examples
    assert (tmp_path / ref).read_bytes() == generated.manifest.resolve(ref).read_bytes()


def test_manifest_round_trip(generated):
    """A saved manifest reloads to the same examples and class maps."""
    from scripts.echorec.datasets import DatasetManifest

    loaded = DatasetManifest.load(generated.manifest_path)
    assert loaded == generated.manifest
    assert loaded.root == generated.manifest_path.parent


def test_manifest_schema_mismatch(tmp_path):
    """Manifests from another schema version are refused."""
    from scripts.echorec.datasets import DatasetManifest
    from scripts.echorec.errors import ConfigError, DatasetSanityError

    path = tmp_path / "manifest.jsonl"
    path.write_text('{"schema_version": 99, "class_maps": {}}\n')
    with pytest.raises(DatasetSanityError):
        DatasetManifest.load(path)
    path.write_text("not json\n")
    with pytest.raises(ConfigError):
        DatasetManifest.load(path)


def test_split_holds_out_sources(generated):
    """Held-out sources form the test set; validation is a seeded share of the rest."""
    from scripts.echorec.datasets import SplitSpec, split

    parts = split(generated.manifest, SplitSpec(("chirp",), val_fraction=0.25, seed=1))

    assert len(parts.test) == 8
    assert len(parts.val) == 2
    assert len(parts.train) == 6
    assert all(ex.source_kind == "chirp" for ex in parts.test)
    assert all(ex.source_kind == "clap" for ex in parts.train + parts.val)
    ids = [ex.example_id for ex in parts.train + parts.val + parts.test]
    assert len(set(ids)) == 16


def test_split_empty_partitions(generated):
    """Holding out every source, or none present, leaves a partition empty."""
    from scripts.echorec.datasets import SplitSpec, split
    from scripts.echorec.errors import EmptyPartitionError

    with pytest.raises(EmptyPartitionError):
        split(generated.manifest, SplitSpec(("chirp", "clap")))
    with pytest.raises(EmptyPartitionError):
        split(generated.manifest, SplitSpec(("white",)))


def test_load_arrays(generated):
    """Feature files stack into model inputs with integer labels."""
    from scripts.echorec.datasets import load_arrays

    manifest = generated.manifest
    data = load_arrays(manifest, manifest.examples[:4], "open_closed", with_images=True)

    assert data.audio.shape == (4, 62, 25)
    assert data.images.shape == (4, 64, 25)
    assert data.labels.tolist() == [0, 0, 1, 1]


def test_reflection_labels_from_generated(generated, tmp_path):
    """Every example gets direct, early and late energy from its impulse response."""
    import json

    from scripts.echorec.datasets import export_reflection_labels, write_reflection_labels

    labels = export_reflection_labels(generated.manifest)
    assert len(labels) == 16
    assert all(label.direct > 0 and label.early > 0 for label in labels)

    write_reflection_labels(labels, tmp_path / "reflections.jsonl")
    rows = [json.loads(line) for line in (tmp_path / "reflections.jsonl").read_text().splitlines()]
    assert rows[0]["example_id"] == labels[0].example_id


def test_reflection_labels_free_field(tmp_path):
    """In free field all energy is direct."""
    from scripts.echorec.acoustics import synthesize_ir
    from scripts.echorec.datasets import DatasetManifest, LabeledExample, export_reflection_labels
    from scripts.echorec.scene import SourceReceiver, open_room

    ir, _ = synthesize_ir(open_room((5.0, 4.0, 3.0)), SourceReceiver((1, 2, 1.5), (2, 2, 1.5)))
    ir.save(tmp_path / "free.npz")
    example = LabeledExample(
        "free", "f.feat", None, "open", 1.0, "glass", "clap", "free", 0, ir="free.npz"
    )
    manifest = DatasetManifest([example], (1.0, 2.0), ("glass",), root=tmp_path)
    (label,) = export_reflection_labels(manifest)

    assert label.direct == pytest.approx(9.0)
    assert label.early == 0.0
    assert label.late == 0.0


def test_reflection_labels_need_impulse_responses(tmp_path):
    """Examples without a retained impulse response cannot be labeled."""
    from scripts.echorec.datasets import DatasetManifest, LabeledExample, export_reflection_labels
    from scripts.echorec.errors import MissingIRError

    example = LabeledExample("x", "x.feat", None, "open", 1.0, "glass", "clap", "s", 0)
    with pytest.raises(MissingIRError):
        export_reflection_labels(DatasetManifest([example], (1.0, 2.0), ("glass",), root=tmp_path))


def test_failed_cells_are_reported(tmp_path):
    """A scene without a target panel fails every cell without raising."""
    from scripts.echorec.datasets import SweepConfig, generate_dataset
    from scripts.echorec.scene import Scene, uniform_room

    sweep = SweepConfig(
        scenes=(Scene("bare", room=uniform_room((4.0, 4.0, 3.0), 0.2)),),
        depths=(1.0, 2.0),
        materials=("glass",),
        states=("closed",),
        sources=("clap",),
    )
    result = generate_dataset(sweep, tmp_path)

    assert result.manifest.examples == []
    assert [f.cell_id for f in result.failures] == ["bare_d1_glass_closed", "bare_d2_glass_closed"]


def _score_open_closed(out_dir):
    """Render a small window sweep, hold out the last noise seed, score two learners."""
    from scripts.echorec.baselines import KnnClassifier
    from scripts.echorec.datasets import SweepConfig, generate_dataset, load_arrays
    from scripts.echorec.echonet.model import ModelConfig, predict
    from scripts.echorec.echonet.train import TrainConfig, train
    from scripts.echorec.metrics import metrics_from_predictions
    from scripts.echorec.scene import load_scene

    sweep = SweepConfig(
        scenes=(load_scene(SCENES / "window_sweep.conf"),),
        depths=(1.0, 2.0),
        materials=("glass",),
        sources=("clap",),
        seeds=5,
        order=1,
        images=False,
        keep_ir=False,
    )
    manifest = generate_dataset(sweep, out_dir, seed=5).manifest
    held = [ex for ex in manifest.examples if ex.example_id.endswith("_s4_f0")]
    rest = [ex for ex in manifest.examples if ex not in held]
    train_set = load_arrays(manifest, rest, "open_closed")
    test_set = load_arrays(manifest, held, "open_closed")
    names = manifest.class_names("open_closed")

    knn = KnnClassifier(k=1).fit(train_set.audio, train_set.labels)
    knn_metrics = metrics_from_predictions(
        test_set.labels, knn.predict(test_set.audio), "open_closed", names
    )
    config = ModelConfig(n_classes=2, audio_net=(), precision="float64")
    checkpoint = train(config, train_set, TrainConfig(lr=0.01, epochs=40, batch_size=4, seed=5))
    net_labels, _ = predict(checkpoint.to_model(), test_set.audio)
    net_metrics = metrics_from_predictions(test_set.labels, net_labels, "open_closed", names)
    return len(rest), knn_metrics, net_metrics


def test_open_closed_sweep_is_learnable_and_reproducible(tmp_path):
    """Window state is recognized on unseen noise and the whole run repeats exactly."""
    n_train, knn, net = _score_open_closed(tmp_path / "first")
    _, knn_again, net_again = _score_open_closed(tmp_path / "second")

    assert n_train == 16
    assert knn.confusion.sum() == 4
    assert knn.accuracy >= 0.95
    assert net.accuracy >= 0.95
    assert np.array_equal(knn.predictions, knn_again.predictions)
    assert np.array_equal(net.predictions, net_again.predictions)
    assert net.accuracy == net_again.accuracy
