"""Exception hierarchy shared by all vdrating modules."""


class VDRError(Exception):
    """Base class for package errors."""


class InfeasibleSpec(VDRError):
    """The model has at least as many free parameters as data degrees of freedom."""


class QuadratureFailure(VDRError):
    """A nested integration did not reach its tolerance within the refinement budget."""


class SampleTooSmall(VDRError):
    pass


class DataMismatch(VDRError):
    """Two fits that are being compared were made to different data."""


class DegenerateSeries(VDRError):
    pass


class AllEqualRatings(VDRError):
    pass


class NoStablePoint(VDRError):
    """No grid sample size gives stable model preferences."""

    def __init__(self, message, table=None):
        super().__init__(message)
        self.table = table


class ParseError(VDRError):
    pass
