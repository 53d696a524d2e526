"""Exception types raised across the package."""


class TrialSplineError(Exception):
    """Base class for all package errors."""


class MissingColumn(TrialSplineError):
    pass


class ParseError(TrialSplineError):
    def __init__(self, row, column, value=None):
        self.row = row
        self.column = column
        self.value = value
        msg = f"row {row}: cannot parse column {column!r}"
        if value is not None:
            msg += f" (value {value!r})"
        super().__init__(msg)


class InvariantViolation(TrialSplineError):
    def __init__(self, description, row=None):
        self.row = row
        self.description = description
        prefix = f"row {row}: " if row is not None else ""
        super().__init__(prefix + description)


class EmptyData(TrialSplineError):
    pass


class DegenerateTimes(TrialSplineError):
    pass


class KnotOrdering(TrialSplineError):
    pass


class VisitOutOfRange(TrialSplineError):
    pass


class IncompatibleSpec(TrialSplineError):
    pass


class UnscheduledTime(TrialSplineError):
    pass


class SingularDesign(TrialSplineError):
    pass


class SingularHessian(TrialSplineError):
    pass


class MissingVcov(TrialSplineError):
    pass


class TooFewClusters(TrialSplineError):
    pass


class CorruptRecords(TrialSplineError):
    pass
