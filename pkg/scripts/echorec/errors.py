"""Exception hierarchy for echorec.

Every failure a caller can act on has its own class. The CLI maps them to exit codes
(see ``main.EXIT_CODES``).
"""


class EchoRecError(Exception):
    """Base class for all echorec errors."""


class ConfigError(EchoRecError):
    """Configuration file missing or malformed."""

    def __init__(self, message: str, line: int | None = None):
        """Create the error, optionally pointing at a 1-based line number."""
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


# Acoustics


class ZeroAbsorptionError(EchoRecError):
    """Total absorption is zero, so the Sabine time is unbounded."""


class SampleRateMismatchError(EchoRecError):
    """Two signals that must share a sample rate do not."""


class DivisionByZeroError(EchoRecError, ZeroDivisionError):
    """Observer speed of zero in the Doppler relation."""


class NonPositiveFrequencyError(EchoRecError, ValueError):
    """Frequency must be strictly positive."""


class GeometryError(EchoRecError, ValueError):
    """Room, panel or pose geometry violates its invariants."""


# DSP


class UnknownSourceKindError(EchoRecError, ValueError):
    """Pulse source kind is not part of the palette."""


class TooShortError(EchoRecError):
    """Signal is shorter than one analysis window."""


class FeatureFileError(EchoRecError):
    """Feature file has a bad magic, version or size."""


# Networks


class ShapeMismatchError(EchoRecError, ValueError):
    """Input or parameter shape does not match the model."""


class MissingModalityError(EchoRecError):
    """A model input required by the merge mode was not supplied."""


class InvalidDistributionError(EchoRecError, ValueError):
    """Probabilities are negative or do not sum to one."""


class EmptyDatasetError(EchoRecError):
    """Training was asked to run on zero examples."""


class LabelOutOfRangeError(EchoRecError, ValueError):
    """A class label is outside ``0..M-1``."""


class CheckpointError(EchoRecError):
    """Checkpoint file is corrupted or truncated."""


class UnsupportedVersionError(CheckpointError):
    """Checkpoint or manifest version is not recognized."""


# Mesh


class ObjParseError(EchoRecError):
    """OBJ input could not be parsed."""

    def __init__(self, message: str, line: int):
        """Create the error for a 1-based source line."""
        self.line = line
        super().__init__(f"line {line}: {message}")


class HullDegenerateError(EchoRecError):
    """Points are collinear (or too few) for a planar hull."""


class EmptyResultError(EchoRecError):
    """A filter removed every face."""


class PreconditionViolatedError(EchoRecError):
    """Operation called with inputs its guard rejects."""


# Datasets and evaluation


class UnknownMaterialError(EchoRecError, ValueError):
    """Material name is not in the material library."""


class EmptyPartitionError(EchoRecError):
    """A split produced an empty train or test partition."""


class EmptyTrainSetError(EchoRecError):
    """Baseline classifier has no training points."""


class EmptyTestSetError(EchoRecError):
    """Evaluation was asked to score zero examples."""


class MissingIRError(EchoRecError):
    """Manifest example has no retained impulse response."""


class DatasetSanityError(EchoRecError):
    """Generated sweep fails a physical sanity check."""


class ConvergenceWarning(UserWarning):
    """Iterative solver stopped at its iteration cap."""
