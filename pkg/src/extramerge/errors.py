"""Exception hierarchy.

Two families matter to callers (and map to distinct CLI exit codes):
data errors, raised when inputs on disk or in memory are malformed, and
numerical degeneracies, raised when the geometry needed by the algorithm
does not exist (all checkpoints identical, zero stride, ...).
"""


class ExtraMergeError(Exception):
    """Base class for all errors raised by this package."""


class DataError(ExtraMergeError, ValueError):
    """Malformed or inconsistent input data."""


class NonFiniteError(DataError):
    def __init__(self, what="vector"):
        super().__init__(f"non-finite entry in {what}")


class HeaderMismatchError(DataError):
    """Bad magic, dtype, size or dimension in a checkpoint file."""

    def __init__(self, detail):
        super().__init__(f"header/dimension mismatch: {detail}")


class ChecksumMismatchError(DataError):
    def __init__(self, path, expected, actual):
        super().__init__(
            f"checksum mismatch in {path}: manifest {expected:016x}, file {actual:016x}"
        )


class DimensionMismatchError(DataError):
    def __init__(self, expected, actual):
        super().__init__(f"dimension mismatch: expected d={expected}, got d={actual}")


class InsufficientCheckpointsError(DataError):
    def __init__(self, needed, available):
        super().__init__(
            f"insufficient checkpoints: need {needed}, manifest provides {available}"
        )


class SpacingError(DataError):
    """Manifest steps are not compatible with the requested interval."""

    def __init__(self, detail):
        super().__init__(f"step spacing inconsistent with tau: {detail}")


class EmptyValidationSetError(DataError):
    def __init__(self):
        super().__init__("empty validation set")


class NumericalDegeneracyError(ExtraMergeError, ArithmeticError):
    """The requested geometric quantity is undefined for these inputs."""


class DegenerateSpectrumError(NumericalDegeneracyError):
    def __init__(self, detail=""):
        msg = "degenerate spectrum: no dominant direction"
        super().__init__(f"{msg} ({detail})" if detail else msg)


class OrientationUndefinedError(NumericalDegeneracyError):
    def __init__(self):
        super().__init__(
            "orientation undefined: latest displacement is orthogonal to the direction"
        )


class ZeroStrideError(NumericalDegeneracyError):
    def __init__(self):
        super().__init__("zero stride: the last two projections coincide")


class UnstableSpecError(NumericalDegeneracyError, ValueError):
    def __init__(self, detail):
        super().__init__(f"unstable spec: {detail}")


class TrainingDivergedError(NumericalDegeneracyError):
    def __init__(self, step, loss):
        super().__init__(f"training diverged at step {step}: loss={loss!r}")
