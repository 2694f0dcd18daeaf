"""Exception types shared across the package."""


class MulticourseError(Exception):
    """Base class for all package errors."""


class DimensionError(MulticourseError):
    """Tensor shapes incompatible for the requested operation."""


class ContractError(MulticourseError):
    """An operation was called in a way its contract forbids."""


class ConfigError(MulticourseError):
    """Invalid or unknown configuration value."""


class InputError(MulticourseError):
    """Bad input data (corpus, sequence, dataset)."""


class CheckpointFormatError(MulticourseError):
    """Checkpoint file is malformed or truncated."""


class DigestMismatchError(CheckpointFormatError):
    """Checkpoint config digest does not match the expected config."""


class MergeError(MulticourseError):
    """Checkpoints cannot be merged (shape or name mismatch)."""


class NonFiniteLossError(MulticourseError):
    """A loss component became NaN or infinite; the step was aborted."""
