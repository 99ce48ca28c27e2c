"""Exception types raised across the package."""


class CodedCacheError(Exception):
    """Base class for all library errors."""


class LengthMismatch(CodedCacheError, ValueError):
    pass


class NonPositiveValue(CodedCacheError, ValueError):
    pass


class PopularityNotNormalized(CodedCacheError, ValueError):
    pass


class OutOfRange(CodedCacheError, ValueError):
    pass


class InvalidScenario(CodedCacheError, ValueError):
    pass


class TooManyUsers(CodedCacheError, ValueError):
    pass


class EmptyActiveSet(CodedCacheError, ValueError):
    pass


class EmptySubset(CodedCacheError, ValueError):
    pass


class EnumerationTooLarge(CodedCacheError, ValueError):
    pass


class TooManyPermutations(CodedCacheError, ValueError):
    pass


class ProblemTooLarge(CodedCacheError, ValueError):
    pass


class NonPositiveAnchor(CodedCacheError, ValueError):
    pass


class NotStandardGP(CodedCacheError, ValueError):
    """The problem still carries un-condensed 1/(q+x) <= 1 constraints."""


class Infeasible(CodedCacheError):
    pass


class MaxIterations(CodedCacheError):
    pass


class NumericalBreakdown(CodedCacheError, ArithmeticError):
    pass


class NonMonotoneTrace(CodedCacheError):
    pass


class CacheUnderuse(CodedCacheError, ValueError):
    pass


class NonuniformSizes(CodedCacheError, ValueError):
    pass


class NeedTwoSchemes(CodedCacheError, ValueError):
    pass


class ConfigError(CodedCacheError, ValueError):
    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")


class UndecodableBit(CodedCacheError):
    def __init__(self, message, witness):
        self.witness = witness
        super().__init__(message)
