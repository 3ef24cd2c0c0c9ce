"""Exception hierarchy.

Every error carries the CLI exit code it maps to: 1 for configuration
problems, 2 for data problems, 3 for numerical failures.
"""


class WnllError(Exception):
    exit_code = 1


class ConfigError(WnllError):
    exit_code = 1


class DataError(WnllError):
    exit_code = 2


class MalformedLine(DataError):
    pass


class BadTimestamp(DataError):
    pass


class EmptyWindow(DataError):
    pass


class NumericalError(WnllError, ArithmeticError):
    exit_code = 3


class IndexOutOfRange(NumericalError, IndexError):
    pass


class NonFiniteLoss(NumericalError):
    pass


class DivergedLoss(NumericalError):
    pass


class LineSearchFailed(NumericalError):
    pass


class SpecialFunctionDomain(NumericalError, ValueError):
    pass


class DomainError(NumericalError, ValueError):
    pass


class QuadratureNotConverged(NumericalError):
    pass


class GridTooCoarse(NumericalError, ValueError):
    pass
