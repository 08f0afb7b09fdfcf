"""Exception hierarchy.

Each family maps to a distinct process exit code used by the CLI.
"""


class PowerCapError(Exception):
    exit_code = 1


class ConfigError(PowerCapError, ValueError):
    exit_code = 3


class DataError(PowerCapError, ValueError):
    """Base for anything wrong with an input dataset."""

    exit_code = 4


class SchemaError(DataError):
    pass


class RowError(DataError):
    def __init__(self, message, row=None, field=None):
        super().__init__(message)
        self.row = row
        self.field = field


class EmptyDataset(DataError):
    pass


class EmptySeries(DataError):
    pass


class MalformedSeries(DataError):
    pass


class MixedJobs(DataError):
    pass


class InsufficientData(PowerCapError, ValueError):
    exit_code = 5


class DegenerateTest(InsufficientData):
    pass


class DegenerateRegression(InsufficientData):
    pass


class ConstantCovariate(InsufficientData):
    def __init__(self, covariate):
        super().__init__(f"covariate {covariate!r} has zero variance; cannot standardize")
        self.covariate = covariate


class SingularOutcomeModel(InsufficientData):
    pass


class IoError(PowerCapError, OSError):
    exit_code = 6


class SpecError(PowerCapError, ValueError):
    exit_code = 3


class EmptyRuns(PowerCapError, ValueError):
    exit_code = 5


class MalformedRun(DataError):
    pass


class MissingBaseline(DataError):
    exit_code = 7
