"""Exception types shared across the package."""


class EditLeakError(Exception):
    """Base class for all package errors."""


class InvalidInputError(EditLeakError, ValueError):
    """Malformed arguments: wrong shapes, non-finite entries, bad ids."""


class NotSPDError(EditLeakError):
    """A matrix expected to be symmetric positive definite is not."""


class SingularSystemError(EditLeakError):
    """An inner linear system is numerically singular."""


class DegenerateProjectionError(EditLeakError):
    """The projected key matrix P K lost rank."""


class InsufficientRankError(EditLeakError):
    """Requested more singular directions than the matrix supports."""


class DegenerateBatchError(EditLeakError):
    """Could not sample a full-rank edit batch."""


class CamouflageDegenerateError(EditLeakError):
    """The regularized camouflage system G + lambda I is singular."""


class ConstructionFailedError(EditLeakError):
    """An alias or equivalent residual could not be built."""


class ResourceError(EditLeakError):
    """A requested world exceeds the memory budget."""


class ConfigError(EditLeakError):
    """Invalid experiment configuration. Carries an optional line number."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
