"""Exception hierarchy shared across the pipeline.

Every domain failure derives from :class:`DriftLabError`; the CLI maps those
to exit code 1 and everything else (argparse) to exit code 2.
"""


class DriftLabError(Exception):
    """Base class for all domain errors."""


class MalformedRow(DriftLabError):
    def __init__(self, row: int, message: str):
        super().__init__(f"row {row}: {message}")
        self.row = row


class NonFiniteValue(DriftLabError):
    def __init__(self, row: int, column: str):
        super().__init__(f"row {row}, column {column!r}: non-finite value")
        self.row = row
        self.column = column


class HeaderMismatch(DriftLabError):
    def __init__(self, column: int, expected: str, found: str):
        super().__init__(f"header column {column}: expected {expected!r}, found {found!r}")
        self.column = column
        self.expected = expected
        self.found = found


class InsufficientData(DriftLabError):
    pass


class NonMonotoneTime(DriftLabError):
    pass


class DimensionMismatch(DriftLabError):
    pass


class NonFiniteInput(DriftLabError):
    pass


class NoConvergence(DriftLabError):
    def __init__(self, max_iterations: int):
        super().__init__(f"SMO did not converge within {max_iterations} pair updates")
        self.max_iterations = max_iterations


class VersionMismatch(DriftLabError):
    pass


class CorruptPayload(DriftLabError):
    pass


class InvalidConfig(DriftLabError):
    pass


class IncompatibleModel(DriftLabError):
    pass


class InvalidLatency(DriftLabError):
    pass


class EmptyDataset(DriftLabError):
    pass


class InsufficientRuns(DriftLabError):
    pass
