"""Exception types shared across the package.

Each maps to a distinct CLI exit code (see cli.EXIT_CODES).
"""


class ShapeError(ValueError):
    """An array has the wrong rank, size, or an incompatible spatial shape."""


class InvalidLabelError(ValueError):
    """A mask contains class ids outside [0, num_classes)."""


class InvalidEncodingError(ValueError):
    """A supposed one-hot array is not one-hot (per-pixel channel sum != 1)."""


class SchemaError(ValueError):
    """Two named-parameter collections disagree in names or per-name shapes."""


class ConfigError(Exception):
    """A configuration value or key path is invalid."""


class PrerequisiteError(Exception):
    """A phase was started before the artifacts it depends on exist."""


class TrainingFaultError(RuntimeError):
    """Training hit a numerical fault (non-finite loss or gradient)."""


class CheckpointError(Exception):
    """A checkpoint file is malformed or does not match the target network."""


class UndefinedGapError(ValueError):
    """Domain-gap percentages are undefined (upper bound equals the source score)."""
