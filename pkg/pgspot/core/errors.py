from typing import List, Optional


class SpotError(Exception):
    """Base error for every failure the pipeline reports to its caller.

    Carries a process exit code and a human readable detail, the same way an
    HTTP exception carries a status code and a detail message.
    """

    exit_code: int = 2

    def __init__(self, detail: str = "", exit_code: Optional[int] = None):
        super().__init__(detail)
        self.detail = detail
        if exit_code is not None:
            self.exit_code = exit_code

    def __str__(self) -> str:
        return self.detail


class UsageError(SpotError):
    exit_code = 1


class DataError(SpotError):
    exit_code = 2


class AnnotationError(DataError):
    pass


class PointOutOfBoundsError(DataError):
    def __init__(self, index: int, point, bounds):
        super().__init__(f"Point {index} at {tuple(point)} is outside the map bounds {tuple(bounds)}")
        self.index = index


class OracleScaleError(DataError):
    pass


class BadMagicError(DataError):
    def __init__(self, path, found: bytes):
        super().__init__(f"bad magic in {path}: {found!r}")


class VersionMismatchError(DataError):
    pass


class TruncatedFileError(DataError):
    pass


class DuplicateTensorError(DataError):
    pass


class NumericError(SpotError):
    exit_code = 3


class GraphCycleError(NumericError):
    pass


class InfeasibleAlignmentError(NumericError):
    """The sequence is too short to host the label under CTC rules."""

    def __init__(self, length: int, required: int, detail: Optional[str] = None):
        super().__init__(detail or f"infeasible: sequence of length {length} needs at least {required} frames")
        self.length = length
        self.required = required


class TrainingDivergedError(NumericError):
    def __init__(self, detail: str, trace: List[float]):
        super().__init__(detail)
        self.trace = trace
