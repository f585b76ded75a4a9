"""Exception hierarchy shared by every protocol module."""


class DPLabError(Exception):
    """Base class for all errors raised by dplab."""


class InvalidArgument(DPLabError, ValueError):
    """A precondition on an argument was violated."""


class SolverFailure(DPLabError, RuntimeError):
    """An iterative solver exhausted its budget.

    The last optimality residual is kept on ``residual``.
    """

    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class NoAdmissibleLambda(DPLabError):
    """No regularization weight on the ladder meets the discrepancy bound."""


class CalibrationFailure(DPLabError):
    """No threshold on the ladder reaches the coverage target."""


class InconclusiveVerdict(DPLabError):
    """A trend test could not decide between decay and plateau."""

    def __init__(self, message, estimate=None):
        super().__init__(message)
        self.estimate = estimate


class EvolutionBlowup(DPLabError, FloatingPointError):
    """A time evolution produced a non-finite value."""

    def __init__(self, message, step):
        super().__init__(message)
        self.step = step


class InadmissibleDatum(DPLabError):
    """Cauchy datum whose tail flux exceeds the admissibility cap."""


class NoTameContinuation(DPLabError):
    """Every candidate trace failed the universal-tameness check."""


class ParseError(DPLabError, ValueError):
    """Malformed quantifier prefix; ``position`` is the character offset."""

    def __init__(self, message, position):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class QuorumFailure(DPLabError):
    """Too few ensemble members survived a protocol run."""
