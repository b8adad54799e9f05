"""Configuration, constant tables and command line parsing."""

import argparse
import os
from pathlib import Path
from typing import Any

from .errors import ConfigError

# =============================================================================
# Octave bands and materials
# =============================================================================
# Nine octave bands; absorption coefficients are listed in this order everywhere.
# Values at 250 Hz for painted, tile, glass, ceramic and mirror are the bathroom
# inventory figures; the remaining bands follow common handbook tables.
# =============================================================================
OCTAVE_BANDS_HZ: tuple[float, ...] = (
    63.0,
    125.0,
    250.0,
    500.0,
    1000.0,
    2000.0,
    4000.0,
    8000.0,
    16000.0,
)
N_BANDS = len(OCTAVE_BANDS_HZ)
BAND_250HZ = 2

MATERIAL_LIBRARY: dict[str, dict[str, Any]] = {
    "painted": {
        "absorption": [0.12, 0.10, 0.10, 0.06, 0.05, 0.04, 0.04, 0.05, 0.05],
        "transmission": 0.0,
        "is_reflector": False,
    },
    "tile": {
        "absorption": [0.01, 0.01, 0.01, 0.01, 0.01, 0.02, 0.02, 0.02, 0.02],
        "transmission": 0.0,
        "is_reflector": False,
    },
    "ceramic": {
        "absorption": [0.01, 0.01, 0.02, 0.02, 0.02, 0.02, 0.03, 0.03, 0.03],
        "transmission": 0.0,
        "is_reflector": False,
    },
    "glass": {
        "absorption": [0.35, 0.35, 0.25, 0.18, 0.12, 0.07, 0.04, 0.04, 0.04],
        "transmission": 0.02,
        "is_reflector": True,
    },
    "thick_glass": {
        "absorption": [0.18, 0.18, 0.06, 0.04, 0.03, 0.02, 0.02, 0.02, 0.02],
        "transmission": 0.01,
        "is_reflector": True,
    },
    "mirror": {
        "absorption": [0.15, 0.12, 0.25, 0.10, 0.06, 0.04, 0.03, 0.03, 0.03],
        "transmission": 0.0,
        "is_reflector": True,
    },
    "carpet": {
        "absorption": [0.02, 0.08, 0.24, 0.57, 0.69, 0.71, 0.73, 0.73, 0.73],
        "transmission": 0.0,
        "is_reflector": False,
    },
    "concrete": {
        "absorption": [0.01, 0.01, 0.01, 0.02, 0.02, 0.02, 0.03, 0.03, 0.03],
        "transmission": 0.0,
        "is_reflector": False,
    },
    "wood": {
        "absorption": [0.19, 0.15, 0.11, 0.10, 0.07, 0.06, 0.07, 0.07, 0.07],
        "transmission": 0.0,
        "is_reflector": False,
    },
}

# Material classes predicted by the network, and the library entry simulating each.
MATERIAL_CLASSES: dict[str, str] = {"glass": "glass", "mirror": "mirror", "other": "painted"}

# =============================================================================
# Audio
# =============================================================================
SAMPLE_RATE = 44100
FRAME_SECONDS = 1.0
SOURCE_AMPLITUDE = 0.8
SPEED_OF_SOUND = 343.0
TONE_FREQUENCIES_HZ: tuple[int, ...] = (63, 125, 250, 500, 1000, 2000, 4000, 8000, 16000)

TRAIN_SOURCES: tuple[str, ...] = (
    *(f"tone{f}" for f in TONE_FREQUENCIES_HZ),
    "clap",
    "pink",
    "brownian",
)
HELD_OUT_SOURCES: tuple[str, ...] = ("chirp", "white")

DEFAULT_DEPTHS_M: tuple[float, ...] = (0.5, 1.0, 1.5, 2.0, 2.5, 3.0)

THREADS_ENV = "ECHOREC_THREADS"


def worker_count(default: int = 1) -> int:
    """Worker cap from ``ECHOREC_THREADS`` (at least one)."""
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return default
    try:
        return max(1, int(raw))
    except ValueError:
        return default


# =============================================================================
# Config files
# =============================================================================


def parse_value(raw: str) -> Any:
    """Parse a config value as bool, int, float, number list or string."""
    value = raw.strip()
    lowered = value.lower()
    if lowered in ("true", "yes", "on"):
        return True
    if lowered in ("false", "no", "off"):
        return False
    if "," in value:
        items = [item.strip() for item in value.split(",") if item.strip()]
        return [parse_value(item) for item in items]
    try:
        # Parse as float if contains decimal point or exponent, else int
        if any(ch in value for ch in ".eE") and not value.isalpha():
            return float(value)
        return int(value)
    except ValueError:
        return value


def load_config(config_path: Path) -> dict[str, Any]:
    """Load a sectioned key=value configuration file.

    ``[a.b]`` headers nest: keys below land in ``config["a"]["b"]``. Keys before any
    header live at the top level.

    Args:
        config_path: Path to the config file.

    Returns:
        Nested dictionary of parsed values.

    Raises:
        ConfigError: File missing, or a line is neither a header nor ``key = value``.
    """
    if not config_path.exists():
        raise ConfigError(f"configuration file not found: {config_path}")

    config: dict[str, Any] = {}
    section = config
    with open(config_path, encoding="utf-8") as f:
        for number, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                section = config
                for part in line[1:-1].strip().split("."):
                    if not part:
                        raise ConfigError(f"empty section name in {line!r}", number)
                    section = section.setdefault(part, {})
                    if not isinstance(section, dict):
                        raise ConfigError(f"section {part!r} shadows a value", number)
                continue
            if "=" not in line:
                raise ConfigError(f"expected 'key = value', got {line!r}", number)
            key, value = line.split("=", 1)
            section[key.strip()] = parse_value(value)
    return config


def apply_overrides(config: dict[str, Any], overrides: list[str]) -> dict[str, Any]:
    """Apply ``dotted.key=value`` overrides in place; flags win over the file."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must be key=value, got {item!r}")
        key, value = item.split("=", 1)
        parts = key.strip().split(".")
        node = config
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = parse_value(value)
    return config


def section(config: dict[str, Any], name: str) -> dict[str, Any]:
    """Return ``config[name]`` or an empty dict."""
    value = config.get(name, {})
    if not isinstance(value, dict):
        raise ConfigError(f"[{name}] must be a section")
    return value


def as_floats(value: Any, count: int | None = None, name: str = "value") -> list[float]:
    """Coerce a parsed value into a list of floats, optionally of fixed length."""
    items = value if isinstance(value, list) else [value]
    try:
        floats = [float(v) for v in items]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name} must be numeric, got {value!r}") from exc
    if count is not None and len(floats) != count:
        raise ConfigError(f"{name} needs {count} numbers, got {len(floats)}")
    return floats


def as_strings(value: Any) -> list[str]:
    """Coerce a parsed value into a list of strings."""
    items = value if isinstance(value, list) else [value]
    return [str(v) for v in items]


# =============================================================================
# Command line
# =============================================================================


def parse_args(argv: list[str] | None = None) -> argparse.Namespace:
    """Parse command line arguments."""
    parser = argparse.ArgumentParser(
        prog="echorec",
        description="Simulate echoes, classify reflective surfaces and enhance meshes.",
    )
    parser.add_argument("--seed", type=int, default=0, help="Seed for all randomness")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Override a config value (dotted key); repeatable, wins over the file",
    )
    parser.add_argument("--verbose", action="store_true", help="Log at DEBUG level")
    parser.add_argument(
        "--json-errors", action="store_true", help="Also emit errors as a JSON record"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="Generate a labeled dataset from a sweep config")
    p.add_argument("config", type=Path, help="Scene/sweep config file")
    p.add_argument("out_dir", type=Path, help="Output dataset directory")

    p = sub.add_parser("featurize", help="Convert a WAV recording to feature files")
    p.add_argument("wav", type=Path)
    p.add_argument("out_dir", type=Path)

    p = sub.add_parser("train", help="Train an EchoCNN on a manifest")
    p.add_argument("manifest", type=Path)
    p.add_argument("checkpoint", type=Path, help="Output checkpoint path")
    p.add_argument("--model-config", type=Path, help="Model/train config file")
    p.add_argument("--task", choices=["open_closed", "depth", "material"], default="depth")

    p = sub.add_parser("eval", help="Evaluate a checkpoint or baseline on the test split")
    p.add_argument("manifest", type=Path)
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--baseline", choices=["knn", "svm"])
    p.add_argument("--task", choices=["open_closed", "depth", "material"], default="depth")
    p.add_argument("--report-dir", type=Path)
    p.add_argument("--k", type=int, default=5)

    p = sub.add_parser("infer", help="Classify every 1 s frame of a recording")
    p.add_argument("wav", type=Path)
    p.add_argument("--open-closed", type=Path, dest="open_closed", help="Checkpoint")
    p.add_argument("--depth", type=Path, help="Checkpoint")
    p.add_argument("--material", type=Path, help="Checkpoint")
    p.add_argument("--image", type=Path, help="Optional 64x25 image feature file")

    p = sub.add_parser("enhance", help="Repair planar discontinuities in an OBJ mesh")
    p.add_argument("obj", type=Path)
    p.add_argument("classifications", type=Path, help="JSON lines classification file")
    p.add_argument("out_obj", type=Path)
    p.add_argument("--config", type=Path, help="Enhance config file")

    p = sub.add_parser("actmax", help="Synthesize the input that maximizes a class")
    p.add_argument("checkpoint", type=Path)
    p.add_argument("class_index", type=int)
    p.add_argument("out", type=Path, help="Output feature file")
    p.add_argument("--iters", type=int, default=200)
    p.add_argument("--step", type=float, default=0.05)

    p = sub.add_parser("rt60", help="Sabine reverberation time of a scene")
    p.add_argument("config", type=Path, help="Scene config file")
    p.add_argument("--band", type=int, default=BAND_250HZ)
    p.add_argument("--units", choices=["imperial", "metric"], default="imperial")

    return parser.parse_args(argv)
