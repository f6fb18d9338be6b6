"""Exception types raised across the package."""


class WbcovError(Exception):
    """Base class for all package errors."""


class NotFound(WbcovError, ValueError):
    pass


class InvalidDiffSet(WbcovError, ValueError):
    pass


class NotCoprime(WbcovError, ValueError):
    pass


class RulerTooLong(WbcovError, ValueError):
    pass


class NonBinary(WbcovError, ValueError):
    pass


class IncompleteRuler(WbcovError, ValueError):
    pass


class DimensionMismatch(WbcovError, ValueError):
    pass


class SupportExhausted(WbcovError, ValueError):
    pass


class RankDeficient(WbcovError, ArithmeticError):
    pass


class RankError(WbcovError, ValueError):
    """Requested signal subspace does not fit in the observation dimension."""


class IllConditioned(WbcovError, ArithmeticError):
    pass


class SingularCovariance(WbcovError, ArithmeticError):
    pass


class Singular(WbcovError, ArithmeticError):
    pass


class DegenerateObservation(WbcovError, ValueError):
    pass


class ZeroReference(WbcovError, ZeroDivisionError):
    pass


class ZeroVector(WbcovError, ZeroDivisionError):
    pass
