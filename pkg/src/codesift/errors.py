"""Exception hierarchy shared across the pipeline.

Exit-code mapping in the CLI: UsageError -> 1, DataError -> 2, BackendError -> 3.
"""


class CodesiftError(Exception):
    """Base class for all pipeline errors."""


class UsageError(CodesiftError):
    """Bad invocation: unknown command, invalid parameter combination."""


class DataError(CodesiftError):
    """Malformed, inconsistent, or missing data."""


class CorpusFormatError(DataError):
    """A pair/snapshot file failed to parse; carries the offending line number."""

    def __init__(self, message: str, line_no: int | None = None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class DimensionMismatchError(DataError):
    """Vector dimensionality disagrees between provider, store, or query."""


class ReferentialIntegrityError(DataError):
    """An id refers to a record that does not exist in the corpus/snapshot."""


class LineageError(DataError):
    """An artifact's recorded input hashes no longer match the inputs on disk."""

    def __init__(self, message: str, stage_to_rerun: str | None = None):
        if stage_to_rerun:
            message = f"{message} (rerun stage: {stage_to_rerun})"
        super().__init__(message)
        self.stage_to_rerun = stage_to_rerun


class BackendError(CodesiftError):
    """A pluggable backend (embedding provider, reranker, judge) failed."""


class ParserHookError(BackendError):
    """The external syntax-check command itself failed to run.

    Distinct from an 'unparseable' verdict, which is a normal filter outcome.
    """


class TrainingDivergedError(CodesiftError):
    """Toy training hit a non-finite loss; carries the step index."""

    def __init__(self, step: int):
        super().__init__(f"loss became non-finite at step {step}")
        self.step = step
