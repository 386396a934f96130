"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: configuration and usage problems exit
with 2, data problems with 3, and anything else (a broken internal
invariant) with 4.
"""


class HanError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(HanError):
    """Invalid configuration: bad hyperparameter, unknown key, mismatch."""


class UsageError(HanError):
    """An API called with arguments that violate its contract."""


class ShapeError(UsageError):
    """Tensor shapes incompatible with the requested operation."""


class DataError(HanError):
    """Problem with input data files (missing, unreadable, inconsistent)."""


class ParseError(DataError):
    """Malformed content in a sequence, manifest, or partition file."""


class CheckpointError(ConfigError):
    """Checkpoint file corrupt, wrong version, or inconsistent with config."""
