"""Exception hierarchy shared across the toolkit."""


class OccupancyError(Exception):
    """Base class for data errors; the CLI maps these to exit status 1."""


class LengthMismatch(OccupancyError, ValueError):
    pass


class NegativeOccupancy(OccupancyError, ValueError):
    pass


class MissingApc(OccupancyError):
    pass


class SchemaError(OccupancyError):
    pass


class ReferentialError(OccupancyError):
    pass


class EmptyDataset(OccupancyError):
    pass


class NoCoveredCourses(OccupancyError):
    pass


class TooFewPoints(OccupancyError):
    pass


class SingularSystem(OccupancyError):
    pass


class ZeroReference(OccupancyError, ValueError):
    pass


class TooFewLines(OccupancyError):
    pass


class NotCoveredEnough(OccupancyError):
    pass


class InvalidScenario(OccupancyError, ValueError):
    pass


class DegenerateVariogram(UserWarning):
    """Warned (not raised) when every empirical semivariance is zero."""
