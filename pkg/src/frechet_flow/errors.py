"""Exception hierarchy shared by all modules."""


class FrechetFlowError(Exception):
    pass


class ShapeMismatch(FrechetFlowError, ValueError):
    pass


class NotSurjective(FrechetFlowError, ValueError):
    def __init__(self, level, smallest_singular_value=None):
        self.level = level
        self.smallest_singular_value = smallest_singular_value
        super().__init__(
            f"bonding into level {level} is not surjective "
            f"(smallest singular value {smallest_singular_value})"
        )


class IndexOutOfRange(FrechetFlowError, IndexError):
    pass


class NotCoherent(FrechetFlowError, ValueError):
    pass


class NotInjective(FrechetFlowError, ValueError):
    pass


class NonPositiveInput(FrechetFlowError, ValueError):
    pass


class DomainViolation(FrechetFlowError, ValueError):
    pass


class DomainExit(FrechetFlowError, RuntimeError):
    pass


class NoConvergence(FrechetFlowError, RuntimeError):
    pass


class KernelDimJump(FrechetFlowError, RuntimeError):
    pass


class IncoherentSplit(FrechetFlowError, RuntimeError):
    pass


class CertificateMissing(FrechetFlowError, RuntimeError):
    pass


class DepthTooLarge(FrechetFlowError, ValueError):
    pass


class NotASubalgebra(FrechetFlowError, ValueError):
    pass


class SchemaError(FrechetFlowError, ValueError):
    """Input document does not match the expected schema.

    ``where`` names the offending field (a dotted path) and, for JSON parse
    failures, the line number.
    """

    def __init__(self, message, where=None):
        self.where = where
        super().__init__(f"{where}: {message}" if where else message)
