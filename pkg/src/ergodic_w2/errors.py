"""Exception hierarchy shared by every module of the package."""


class ErgodicW2Error(Exception):
    """Base class for all package errors."""


class InvalidParameter(ErgodicW2Error, ValueError):
    pass


class UnknownModel(ErgodicW2Error, KeyError):
    pass


class PreconditionError(ErgodicW2Error, ValueError):
    pass


class AssumptionViolation(ErgodicW2Error):
    """A standing assumption (confluence, Lipschitz, ellipticity) fails."""


class NotConfluent(AssumptionViolation):
    pass


class DegeneratePair(ErgodicW2Error):
    pass


class DegenerateStart(ErgodicW2Error, ValueError):
    pass


class Unstable(ErgodicW2Error):
    pass


class NonFiniteState(ErgodicW2Error, FloatingPointError):
    def __init__(self, message, last_finite_index):
        super().__init__(message)
        self.last_finite_index = last_finite_index


class EmptyTrajectory(ErgodicW2Error, ValueError):
    pass


class DimensionMismatch(ErgodicW2Error, ValueError):
    pass


class TooLarge(ErgodicW2Error):
    pass


class NotConverged(ErgodicW2Error):
    """Iterative solver stopped at ``max_iter``; ``result`` holds the best iterate."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class MassDefect(ErgodicW2Error):
    pass


class TailToleranceUnreachable(ErgodicW2Error):
    pass


class NoiseDominates(ErgodicW2Error):
    pass


class MissingIncrements(ErgodicW2Error):
    pass


class NonPositiveValue(ErgodicW2Error, ValueError):
    pass


class UnboundedZ(ErgodicW2Error, ValueError):
    pass


class SpecViolation(ErgodicW2Error, ValueError):
    pass


class ConfigError(ErgodicW2Error):
    """Bad configuration; ``key`` is the dotted path of the offending entry."""

    def __init__(self, message, key=None):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key
