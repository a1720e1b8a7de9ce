"""Exception taxonomy and the CLI exit-code contract.

Exit codes: 0 success, 2 configuration, 3 data, 4 numeric failure,
5 verification failure. Verification failures are signalled by return
value, not by raising.
"""

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4
EXIT_VERIFY = 5


class ConfigError(ValueError):
    """Bad user-supplied configuration: flags, config keys, parameter ranges."""


class DataError(ValueError):
    """Invalid or inconsistent data content."""


class EmptyFileError(DataError):
    """Input file has no data rows."""


class MissingColumnError(DataError):
    """A required column is absent from the header."""


class NonNumericCellError(DataError):
    """A cell failed numeric parsing."""

    def __init__(self, row: int, column: str, value: str):
        self.row = row
        self.column = column
        self.value = value
        super().__init__(f"non-numeric value {value!r} at row {row}, column {column!r}")


class NaNCellError(DataError):
    """A cell parsed to NaN or infinity."""

    def __init__(self, row: int, column: str):
        self.row = row
        self.column = column
        super().__init__(f"non-finite value at row {row}, column {column!r}")


class MetricUndefinedError(DataError):
    """A metric has no defined value for the given outcomes."""


class NumericError(RuntimeError):
    """Training or evaluation produced a non-finite quantity."""
