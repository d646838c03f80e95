"""Shared exception types."""


class DimensionError(ValueError):
    """Tensor shapes are inconsistent with the requested operation."""


class ConfigurationError(ValueError):
    """A configuration value is invalid (divisibility, ranges, enums)."""


class CheckpointError(IOError):
    """A checkpoint file is missing, corrupt, or of an unsupported version."""
