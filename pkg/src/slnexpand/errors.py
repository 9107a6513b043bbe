"""Exception hierarchy.

Input problems derive from :class:`ValidationError` (a ``ValueError``);
failures of a numerical procedure derive from :class:`NumericalError`
(an ``ArithmeticError``). The CLI maps the two families to exit codes 1 and 2.
"""


class ValidationError(ValueError):
    """Invalid user input or violated invariant."""


class NumericalError(ArithmeticError):
    """A numerical procedure failed or would lose all accuracy."""


class ParseError(ValidationError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NotPositiveDefinite(ValidationError):
    pass


class DegreeTooLarge(ValidationError):
    pass


class UnsupportedOrder(ValidationError):
    pass


class UnsupportedCopula(ValidationError):
    pass


class GridNotPositive(ValidationError):
    pass


class DomainError(ValidationError):
    pass


class IntegrabilityViolated(ValidationError):
    pass


class ParameterConflict(ValidationError):
    pass


class MomentMatrixSingular(NumericalError):
    pass


class BasisOverflow(NumericalError):
    pass


class NoConvergence(NumericalError):
    pass


class HessianNotPD(NumericalError):
    pass


class TensorTooLarge(NumericalError):
    pass


class NumericalBlowup(NumericalError):
    pass
