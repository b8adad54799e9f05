"""Integration tests for the echorec command line.

Each test runs the wrapper script in a subprocess from the repository root.
"""

import json
import subprocess
import sys
from pathlib import Path

SWEEP_CONF = """\
name = tiny
[room]
dims = 5.0, 4.0, 3.0
exterior_walls = x1
[walls]
default = painted
[panel.window]
wall = x1
rect = 1.0, 0.8, 3.0, 2.2
material = glass
state = closed
exterior = true
[sweep]
target_panel = window
depths = 1.0, 2.0
materials = glass
states = open, closed
sources = clap, chirp
order = 1
"""

MODEL_CONF = """\
[model]
merge = none
modality = audio
audio_net = maxpool:4, dense:8, featurenorm
[train]
epochs = 2
batch_size = 4
"""


def get_repo_root() -> Path:
    """Get the repository root directory."""
    return Path(__file__).parent.parent


def run_cli(*args: str) -> subprocess.CompletedProcess:
    """Run the command line wrapper and return the result."""
    return subprocess.run(
        [sys.executable, "scripts/echorec_cli.py", *[str(a) for a in args]],
        capture_output=True,
        text=True,
        cwd=get_repo_root(),
        check=False,  # We check returncode explicitly in tests
    )


def test_rt60_reports_bathroom():
    """The bathroom inventory reverberates for 0.94 s at 250 Hz."""
    result = run_cli("rt60", "scripts/scenes/bathroom.conf")

    assert result.returncode == 0, result.stderr
    assert "Total: RT60 = 0.94 s" in result.stdout
    assert "sabins" in result.stdout


def test_missing_config_is_usage_error():
    """An unreadable config exits with 1 and a diagnostic."""
    result = run_cli("--json-errors", "rt60", "scripts/scenes/does_not_exist.conf")

    assert result.returncode == 1
    assert result.stderr.startswith("error:")
    record = json.loads(result.stderr.strip().splitlines()[-1])
    assert record["error"] == "ConfigError"
    assert record["exit_code"] == 1


def test_unknown_command_is_usage_error():
    """Bad arguments exit with 1."""
    assert run_cli("transmogrify").returncode == 1


def test_enhance_without_classifications(tmp_path):
    """An empty classification file leaves the mesh unchanged."""
    obj = tmp_path / "tri.obj"
    obj.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
    classes = tmp_path / "classes.jsonl"
    classes.write_text("")
    out = tmp_path / "out.obj"

    result = run_cli("enhance", obj, classes, out)

    assert result.returncode == 0, result.stderr
    assert "Total: 3 vertices, 1 faces (+0 faces, 0 holes filled)" in result.stdout
    assert out.exists()


def test_simulate_train_eval(tmp_path):
    """A tiny sweep can be simulated, trained on and evaluated end to end."""
    conf = tmp_path / "tiny.conf"
    conf.write_text(SWEEP_CONF)
    model_conf = tmp_path / "model.conf"
    model_conf.write_text(MODEL_CONF)
    data = tmp_path / "data"

    result = run_cli("--seed", "4", "simulate", conf, data)
    assert result.returncode == 0, result.stderr
    assert "Total: 8 examples from 4 cells (0 failed)" in result.stdout
    assert (data / "manifest.jsonl").exists()
    assert len((data / "reflections.jsonl").read_text().splitlines()) == 8

    ckpt = tmp_path / "depth.ckpt"
    result = run_cli(
        "train", data / "manifest.jsonl", ckpt, "--model-config", model_conf, "--task", "depth"
    )
    assert result.returncode == 0, result.stderr
    assert "on 4 examples" in result.stdout
    assert ckpt.exists()

    reports = tmp_path / "reports"
    result = run_cli(
        "eval", data / "manifest.jsonl", "--checkpoint", ckpt, "--report-dir", reports
    )
    assert result.returncode == 0, result.stderr
    assert "across 4 examples" in result.stdout
    assert (reports / "confusion_depth.csv").exists()
    record = json.loads((reports / "metrics.jsonl").read_text())
    assert record["class_names"] == ["1", "2"]

    result = run_cli("eval", data / "manifest.jsonl", "--baseline", "knn", "--k", "1")
    assert result.returncode == 0, result.stderr
    assert "kNN (k=1)" in result.stdout

    _check_frame_commands(tmp_path, ckpt)


def test_eval_needs_a_predictor(tmp_path):
    """Eval without a checkpoint or baseline fails with a usage error."""
    conf = tmp_path / "tiny.conf"
    conf.write_text(SWEEP_CONF.replace("states = open, closed", "states = closed"))
    data = tmp_path / "data"
    assert run_cli("simulate", conf, data).returncode == 0

    result = run_cli("eval", data / "manifest.jsonl")
    assert result.returncode == 1
    assert "needs --checkpoint or --baseline" in result.stderr


def _check_frame_commands(tmp_path, ckpt):
    import numpy as np

    from scripts.echorec.dsp import Waveform
    from scripts.echorec.wavio import write_wav

    t = np.arange(int(2.5 * 44100)) / 44100
    wav = tmp_path / "room.wav"
    write_wav(wav, Waveform(0.5 * np.sin(2 * np.pi * 1000 * t)))

    result = run_cli("featurize", wav, tmp_path / "feats")
    assert result.returncode == 0, result.stderr
    assert "Total: 2 frames" in result.stdout
    assert (tmp_path / "feats" / "room_f1.feat").exists()

    result = run_cli("infer", wav, "--depth", ckpt)
    assert result.returncode == 0, result.stderr
    records = [json.loads(line) for line in result.stdout.splitlines()]
    assert [r["frame_id"] for r in records] == ["room_f0", "room_f1"]
    assert all(r["depth"]["label"] in ("1", "2") for r in records)

    grid = tmp_path / "actmax.feat"
    result = run_cli("actmax", ckpt, "0", grid, "--iters", "3")
    assert result.returncode == 0, result.stderr
    assert "Total:" in result.stdout
    assert grid.exists()
