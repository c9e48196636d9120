# errors.py
"""Exception hierarchy shared by the library modules and the CLI.

Every error carries the process exit code the CLI reports for it:
2 usage, 3 data, 4 discovery failure, 5 numerical failure.
"""

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_DISCOVERY = 4
EXIT_NUMERICAL = 5


class LagrangifyError(Exception):
    exit_code = 1


class UsageError(LagrangifyError):
    exit_code = EXIT_USAGE


class SpecInvalid(UsageError):
    pass


class BadColumn(UsageError):
    pass


class UnknownPreset(UsageError):
    pass


class DataError(LagrangifyError):
    exit_code = EXIT_DATA


class ParseError(DataError):
    pass


class MissingForcing(DataError):
    pass


class IndexOutOfRange(DataError):
    pass


class NonUniformTimeGrid(DataError):
    pass


class DiscoveryError(LagrangifyError):
    exit_code = EXIT_DISCOVERY


class EmptySupport(DiscoveryError):
    pass


class NoConvergence(DiscoveryError):
    def __init__(self, message, support=()):
        super().__init__(message)
        self.support = tuple(support)


class ResidualTooLarge(DiscoveryError):
    pass


class InconsistentCoupling(DiscoveryError):
    pass


class NonDiagonalKinetic(DiscoveryError):
    pass


class TemplateMismatch(DiscoveryError):
    pass


class NumericalError(LagrangifyError):
    exit_code = EXIT_NUMERICAL


class NonFinite(NumericalError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class CflViolation(NumericalError):
    pass


class StabilityViolation(NumericalError):
    pass


class RankDeficientWarning(UserWarning):
    """Effective rank of an unregularized least-squares problem is below its column count."""
