"""Tests for config loading functionality."""

import tempfile
from pathlib import Path

import pytest


def _write(text: str) -> Path:
    with tempfile.NamedTemporaryFile(mode="w", suffix=".conf", delete=False) as f:
        f.write(text)
        f.flush()
        return Path(f.name)


def test_load_config_returns_dict():
    """load_config should return a dictionary for the shipped config."""
    from scripts.echorec.config import load_config

    config_path = Path(__file__).parent.parent / "scripts" / "echorec.conf"
    result = load_config(config_path)

    assert isinstance(result, dict)
    assert result["model"]["merge"] == "none"
    assert result["train"]["batch_size"] == 32
    assert result["split"]["held_out_sources"] == ["chirp", "white"]


def test_load_config_ignores_comments_and_blank_lines():
    """Comment lines, trailing comments and empty lines are skipped."""
    from scripts.echorec.config import load_config

    path = _write("# comment\n\nKEY = 100  # trailing\n  # indented\n")
    assert load_config(path) == {"KEY": 100}


def test_load_config_nests_dotted_sections():
    """[a.b] headers nest dictionaries."""
    from scripts.echorec.config import load_config

    path = _write("top = 1\n[panel.window]\nwall = x1\n[panel.door]\nwall = y0\n")
    result = load_config(path)

    assert result["top"] == 1
    assert result["panel"]["window"]["wall"] == "x1"
    assert result["panel"]["door"]["wall"] == "y0"


def test_parse_value_types():
    """parse_value should produce bools, ints, floats, lists and strings."""
    from scripts.echorec.config import parse_value

    assert parse_value("true") is True
    assert parse_value("off") is False
    assert parse_value("42") == 42
    assert parse_value("0.25") == 0.25
    assert parse_value("1e-8") == 1e-8
    assert parse_value("1, 2.5, 3") == [1, 2.5, 3]
    assert parse_value("painted") == "painted"
    assert parse_value("float32") == "float32"


def test_load_config_missing_file():
    """A missing file raises ConfigError."""
    from scripts.echorec.config import load_config
    from scripts.echorec.errors import ConfigError

    with pytest.raises(ConfigError):
        load_config(Path("/nonexistent/path/config.conf"))


def test_load_config_bad_line_reports_line_number():
    """A line without '=' raises ConfigError carrying its line number."""
    from scripts.echorec.config import load_config
    from scripts.echorec.errors import ConfigError

    path = _write("a = 1\nnot a pair\n")
    with pytest.raises(ConfigError) as excinfo:
        load_config(path)
    assert excinfo.value.line == 2


def test_apply_overrides_wins_over_file():
    """--set style overrides replace nested values and create missing sections."""
    from scripts.echorec.config import apply_overrides

    config = {"train": {"lr": 0.001}}
    apply_overrides(config, ["train.lr=0.01", "enhance.depth_band=0.5"])

    assert config["train"]["lr"] == 0.01
    assert config["enhance"]["depth_band"] == 0.5


def test_apply_overrides_rejects_malformed():
    """An override without '=' is a ConfigError."""
    from scripts.echorec.config import apply_overrides
    from scripts.echorec.errors import ConfigError

    with pytest.raises(ConfigError):
        apply_overrides({}, ["train.lr"])


def test_as_floats_checks_count():
    """as_floats enforces the requested length."""
    from scripts.echorec.config import as_floats
    from scripts.echorec.errors import ConfigError

    assert as_floats([1, 2, 3], 3) == [1.0, 2.0, 3.0]
    assert as_floats(2) == [2.0]
    with pytest.raises(ConfigError):
        as_floats([1, 2], 3)
    with pytest.raises(ConfigError):
        as_floats("abc")


def test_worker_count_reads_environment(monkeypatch):
    """The worker cap comes from ECHOREC_THREADS, defaulting on bad values."""
    from scripts.echorec.config import worker_count

    monkeypatch.setenv("ECHOREC_THREADS", "3")
    assert worker_count() == 3
    monkeypatch.setenv("ECHOREC_THREADS", "zero")
    assert worker_count(default=2) == 2
    monkeypatch.delenv("ECHOREC_THREADS")
    assert worker_count() == 1


def test_parse_args_subcommands():
    """parse_args wires global flags and subcommand arguments."""
    from scripts.echorec.config import parse_args

    args = parse_args(["--seed", "7", "rt60", "room.conf", "--units", "metric"])
    assert args.seed == 7
    assert args.command == "rt60"
    assert args.units == "metric"
    assert args.band == 2

    args = parse_args(["eval", "m.jsonl", "--baseline", "knn"])
    assert args.baseline == "knn"
    assert args.k == 5
