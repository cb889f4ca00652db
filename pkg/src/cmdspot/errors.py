"""Exception taxonomy shared across the toolkit."""


class CmdspotError(Exception):
    """Base class for every error raised by this package."""


class WavFormatError(CmdspotError):
    """Malformed RIFF/WAVE container or unsupported sample encoding."""


class UnsupportedLayoutError(CmdspotError):
    """Audio layout we refuse to process (more than one channel)."""


class CorruptFileError(CmdspotError):
    """Structurally valid header but truncated or inconsistent payload."""


class ValidationError(CmdspotError):
    """An input violates a documented invariant or precondition."""


class LabelError(CmdspotError):
    """A label or directory name outside the known command inventory."""


class CoverageError(CmdspotError):
    """A dataset directory exists but contributes no usable files."""


class InsufficientMaterialError(CmdspotError):
    """No noise source is long enough to carve the requested clips."""


class TooShortError(CmdspotError):
    """Signal shorter than one analysis window."""


class ConfigError(CmdspotError):
    """Inconsistent configuration (shape arithmetic, fingerprints, ...)."""


class NumericFaultError(CmdspotError):
    """Non-finite value detected; ``where`` names the offending block."""

    def __init__(self, message: str, where: str | None = None):
        super().__init__(message)
        self.where = where


class ConsistencyError(CmdspotError):
    """Trace, parameters, or optimizer state do not belong together."""


class EmptyInputError(CmdspotError):
    """An operation received zero frames or zero examples."""


class ScheduleDomainError(CmdspotError):
    """Learning-rate schedule queried outside [0, total_epochs)."""
