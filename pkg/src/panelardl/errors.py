"""Exception hierarchy.

Data problems (bad files, empty samples, missing periods) derive from
:class:`DataError`; failures of the numerical machinery derive from
:class:`NumericalError`.  The CLI maps the two families onto distinct exit codes.
"""


class PanelArdlError(Exception):
    """Base class for all package errors."""


class DataError(PanelArdlError):
    pass


class NumericalError(PanelArdlError):
    pass


class SchemaError(DataError):
    pass


class ParseError(DataError):
    pass


class DuplicateError(DataError):
    pass


class EmptyDataError(DataError):
    pass


class MissingPeriodError(DataError):
    pass


class ScalingError(DataError):
    pass


class PreconditionError(DataError):
    pass


class AbsorptionError(NumericalError):
    pass


class EstimationError(NumericalError):
    pass


class SingularityError(NumericalError):
    pass


class NonstationaryError(NumericalError):
    def __init__(self, message: str, lag_sum: float):
        super().__init__(message)
        self.lag_sum = lag_sum


class LagDistributionError(NumericalError):
    pass


class SearchError(NumericalError):
    pass


class NestingError(NumericalError):
    pass


class JackknifeError(NumericalError):
    pass


class StabilityError(NumericalError):
    pass
