"""Exception hierarchy.

Everything raised on bad input data derives from :class:`DataError`, which the
CLI maps to exit code 2.
"""


class SeqKittiError(Exception):
    """Base class for all toolkit errors."""


class DataError(SeqKittiError):
    """Input data is malformed or violates a type invariant."""


class InvariantViolation(DataError, ValueError):
    def __init__(self, message, frame=None):
        self.frame = frame
        if frame is not None:
            message = f"frame {frame}: {message}"
        super().__init__(message)


class NonRigidPose(InvariantViolation):
    """A 4x4 matrix is not a proper rigid transform (scale, skew or reflection)."""


class NonMonotonicTimestamps(InvariantViolation):
    pass


class FormatError(DataError):
    """Text or binary content does not follow the expected layout."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)


class FieldCountError(FormatError):
    pass


class NumericParseError(FormatError, ValueError):
    pass


class MalformedManifest(FormatError):
    pass


class MalformedCalib(FormatError):
    pass


class MalformedPose(FormatError):
    pass


class MalformedBoxFile(FormatError):
    pass


class TruncatedFile(FormatError):
    pass


class MissingFile(DataError, FileNotFoundError):
    pass


class BehindCamera(SeqKittiError):
    """Point does not lie in front of the image plane."""


class BoxBehindCamera(BehindCamera):
    pass


class UnknownClass(DataError):
    pass


class UnknownCamera(DataError):
    pass


class MissingTimestampChannel(DataError):
    pass


class DuplicateClassFilter(DataError):
    pass


class MixedClasses(DataError):
    pass


class IndexOutOfRange(SeqKittiError, IndexError):
    pass


class EmptyGroundTruth(SeqKittiError):
    """AP is undefined when a class has no ground truth."""
