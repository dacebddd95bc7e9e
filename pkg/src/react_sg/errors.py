from .models import ErrorCodes


class ReactError(Exception):
    code: ErrorCodes = ErrorCodes.VALIDATION_FAILED

    def __init__(self, message: str, code: ErrorCodes | None = None) -> None:
        super().__init__(message)
        self.message = message
        if code is not None:
            self.code = code


class ReportMismatchError(ReactError):
    code = ErrorCodes.REPORT_MISMATCH


class DimensionMismatchError(ReactError):
    code = ErrorCodes.DIMENSION_MISMATCH


class InfeasibleAssignmentError(ReactError):
    code = ErrorCodes.INFEASIBLE_ASSIGNMENT


class SizeLimitError(ReactError):
    code = ErrorCodes.SIZE_LIMIT


class DivergenceError(ReactError):
    code = ErrorCodes.DIVERGENCE


class DatasetTooSmallError(ReactError):
    code = ErrorCodes.DATASET_TOO_SMALL


class ScenarioError(ReactError):
    code = ErrorCodes.CAPACITY_EXCEEDED


class DuplicateViewError(ReactError):
    code = ErrorCodes.DUPLICATE_VIEW


class SnapshotStateError(ReactError):
    code = ErrorCodes.UNCLUSTERED_SNAPSHOT


class StorageError(ReactError):
    code = ErrorCodes.FILE_READ_ERROR


class UsageError(ReactError):
    code = ErrorCodes.VALIDATION_FAILED


class DegenerateEmbeddingError(ReactError):
    """An all-zero output that cannot be projected to the unit sphere."""
