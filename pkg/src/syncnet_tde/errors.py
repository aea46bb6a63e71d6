"""Exception hierarchy for the toolkit.

Every failure mode callers are expected to handle gets its own class so the
CLI can map families of errors onto exit codes.
"""


class ToolkitError(Exception):
    """Base class for all toolkit-specific errors."""


class FormatError(ToolkitError):
    """Malformed or unsupported file contents (e.g. a broken WAV header)."""


class UnsupportedChannelsError(FormatError):
    """WAV file is not mono."""


class RangeError(ToolkitError):
    """Sample values outside the representable [-1, 1] range."""


class InvalidDelayError(ToolkitError):
    """Requested shift is not applicable to the signal."""


class DegenerateSignalError(ToolkitError):
    """Operation needs a signal with nonzero power."""


class SampleRateMismatchError(ToolkitError):
    """Two signals that must share a sample rate do not."""


class InvalidSpecError(ToolkitError):
    """Dataset specification violates its invariants."""


class ShapeError(ToolkitError):
    """Tensor shapes are incompatible with the requested operation."""


class DomainError(ToolkitError):
    """Numeric input outside an operation's domain (e.g. log of <= 0)."""


class ContractError(ToolkitError):
    """API contract violation (e.g. backward from a non-scalar)."""


class DegenerateBatchError(ToolkitError):
    """Batch statistics requested over fewer than two values."""


class InvalidOverlapError(ToolkitError):
    """Window overlap leaves a stride below one sample."""


class InvalidWindowError(ToolkitError):
    """Window length exceeds the input length."""


class InvalidTargetError(ToolkitError):
    """Gaussian target mean falls outside the correlation support."""


class ConfigError(ToolkitError):
    """Model configuration cannot produce a valid network."""


class CheckpointError(ToolkitError):
    """Checkpoint file missing, malformed, or incompatible."""


class DivergenceError(ToolkitError):
    """Training produced a non-finite loss."""
