"""Exception hierarchy shared by the solver, robustness and fitting code."""


class OptDesignError(Exception):
    """Base class for all package errors."""


class ValidationError(OptDesignError, ValueError):
    """Input does not satisfy a documented precondition."""


class DegenerateWeightError(ValidationError):
    """A weight is zero or negative, so its variance 1/w is undefined.

    ``index`` is 0-based; the message names the 1-based component.
    """

    def __init__(self, index, value):
        self.index = index
        self.value = value
        super().__init__(
            f"degenerate weight at component {index + 1} of 4: w={value!r} (must be > 0)"
        )


class PatternMismatch(ValidationError):
    """A closed-form solver was called on a variance vector it does not cover."""


class InconsistentInput(ValidationError):
    """Inputs contradict each other (e.g. a saturated design inside a narrow range)."""


class NumericalError(OptDesignError, ArithmeticError):
    """An iterative method failed to reach its tolerance."""


class NoConvergence(NumericalError):
    def __init__(self, message, residual=None, trace=None):
        self.residual = residual
        self.trace = trace or []
        super().__init__(message)
