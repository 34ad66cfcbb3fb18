"""
exceptions.py

Error hierarchy for the beam toolkit. Each family carries the process exit
code the CLI maps it to.
"""


class BeamError(Exception):
    """base class for all toolkit errors"""
    exit_code = 3


class UsageError(BeamError):
    """invalid flag / argument combinations"""
    exit_code = 1


# ----------------------------------------------------------------------------
# DATA VALIDATION (exit code 2)

class DataValidationError(BeamError):
    exit_code = 2


class DegenerateBounds(DataValidationError):
    pass


class ZeroVector(DataValidationError):
    pass


class EmptyDataset(DataValidationError):
    pass


class NoValidChunkSize(DataValidationError):
    pass


class OutOfSector(DataValidationError):
    pass


class MissingPowers(DataValidationError):
    pass


class EmptySet(DataValidationError):
    pass


class InsufficientData(DataValidationError):
    pass


class ChecksumMismatch(DataValidationError):
    pass


class ParseError(DataValidationError):
    """a malformed row in an input table. `line` is 1-based and counts the header."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = "line {0}: {1}".format(line, message)
        super().__init__(message)


# ----------------------------------------------------------------------------
# MODEL / RUNTIME (exit code 3)

class ModelError(BeamError):
    exit_code = 3


class ShapeMismatch(ModelError):
    pass


class GraphConsumed(ModelError):
    pass
