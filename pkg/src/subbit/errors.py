"""Exception hierarchy.

Every error raised on purpose by this package derives from ``SubbitError``.
The two intermediate classes map onto CLI exit codes: validation problems
(bad input files, malformed streams, violated preconditions) exit with 2,
numerical failures (factorizations, infeasible searches) exit with 3.
"""


class SubbitError(Exception):
    exit_code = 1


class ValidationError(SubbitError, ValueError):
    exit_code = 2


class NumericalError(SubbitError, ArithmeticError):
    exit_code = 3


# tensorio
class MissingFile(ValidationError):
    pass


class SchemaViolation(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class SizeMismatch(ValidationError):
    pass


class NonFiniteValue(ValidationError):
    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


# scoring
class DegenerateAxis(NumericalError):
    pass


# allocation
class AllZeroModel(NumericalError):
    pass


class InfeasibleBudget(NumericalError):
    pass


# quantizer
class DegenerateHessian(NumericalError):
    pass


class NoFeasibleCandidate(NumericalError):
    pass


# compensation
class NotPositiveDefinite(NumericalError):
    pass


# packing
class PackFormatError(ValidationError):
    pass


class OverflowingIndex(PackFormatError):
    pass


class BadMagic(PackFormatError):
    pass


class UnsupportedVersion(PackFormatError):
    pass


class TruncatedStream(PackFormatError):
    def __init__(self, message, offset=None):
        super().__init__(message)
        self.offset = offset
