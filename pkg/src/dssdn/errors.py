"""Exception hierarchy shared by every module in the package."""


class DSSDNError(Exception):
    """Base class for all package errors."""


class DimensionError(DSSDNError, ValueError):
    """A tensor shape does not fit the operation (names the offending axis)."""


class ConfigurationError(DSSDNError, ValueError):
    """An invalid layer, network, or pipeline configuration."""


class ValidationError(DSSDNError, ValueError):
    """Input values violate an operation's precondition."""


class UsageError(DSSDNError, RuntimeError):
    """An API was called in an unsupported order or state."""


class WavParseError(DSSDNError, ValueError):
    """Malformed RIFF/WAVE file."""


class UnsupportedFormatError(DSSDNError, ValueError):
    """Well-formed WAV with an encoding the loader does not handle."""


class CacheCorruptError(DSSDNError, ValueError):
    """A spectrogram cache or checkpoint file failed validation."""


class TrainingError(DSSDNError, RuntimeError):
    """Training cannot proceed (missing gradients, no readable samples, ...)."""


class DataError(DSSDNError, RuntimeError):
    """A dataset or manifest could not be used."""
