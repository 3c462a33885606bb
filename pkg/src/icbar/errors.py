"""Exception hierarchy.

Everything raised on purpose by the package derives from :class:`IcbarError`.
Numerical failures (degenerate states, non-convergence) derive from
:class:`NumericalError` so callers such as the CLI can map them to a distinct
exit status.
"""


class IcbarError(Exception):
    """Base class for all package errors."""


class DomainError(IcbarError, ValueError):
    """Argument outside the domain of a transformation function."""


class ValidationError(IcbarError, ValueError):
    """Malformed subject record or input file.

    ``row`` is the 1-based data row number when the error comes from a file.
    """

    def __init__(self, message, row=None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class EmptyGridError(ValidationError):
    """No subject with an observed event, so no jump grid can be built."""


class NumericalError(IcbarError, ArithmeticError):
    """Base class for numerical failures during fitting or simulation."""


class NonPositiveSurvival(NumericalError):
    def __init__(self, message, subject=None):
        super().__init__(message)
        self.subject = subject


class NonPositiveLikelihoodTerm(NumericalError):
    def __init__(self, message, subject=None):
        super().__init__(message)
        self.subject = subject


class ZeroDenominator(NumericalError):
    def __init__(self, message, subject=None):
        super().__init__(message)
        self.subject = subject


class NonPositiveLambda(NumericalError):
    pass


class IndefiniteHessian(NumericalError):
    pass


class InfiniteWeight(NumericalError, ValueError):
    pass


class DegenerateGCV(NumericalError):
    pass


class ProbabilityOverflow(NumericalError):
    pass


class NoConvergence(NumericalError):
    """Iteration cap reached.

    ``last`` holds the last iterate and ``trace`` the per-iteration step
    norms, when the raising routine has them.
    """

    def __init__(self, message, last=None, trace=None):
        super().__init__(message)
        self.last = last
        self.trace = trace
