"""Exception and warning types shared across the package."""


class CoocError(Exception):
    """Base class for all package errors."""


class FileFormatError(CoocError):
    """Bad magic bytes or unsupported version in a binary file."""


class FileCorruptionError(CoocError):
    """Declared shape and payload length disagree, or trailing bytes."""


class ValidationError(CoocError):
    """Payload values violate an invariant (NaN/Inf, overlapping id sets, ...)."""


class DimensionError(CoocError, ValueError):
    """Operands have incompatible shapes."""


class DomainError(CoocError, ValueError):
    """Argument outside the operation's domain (D < 2, empty offset set, ...)."""


class GroundTruthError(CoocError):
    """Ground-truth directory is incomplete or inconsistent."""


class TrainingError(CoocError):
    """Training cannot proceed (e.g. every pair is degenerate)."""


class DegenerateDescriptorWarning(UserWarning):
    """A zero vector reached a normalization or weighting step."""
