"""Exception types shared across the package."""


class InputError(ValueError):
    """Malformed or inconsistent input (dimensions, NaN entries, bad ranges)."""


class SolverError(RuntimeError):
    """A numerical solver failed to produce a certified answer.

    The failing :class:`~invmono.optkit.SolveReport` is kept on ``report``.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class InvariantViolation(ValueError):
    """Data violates a structural invariant (monotonicity, group closure, ...)."""


class UnsupportedKernel(ValueError):
    """The requested kernel exponent cannot be handled by the QP machinery."""


class CapacityError(RuntimeError):
    """A discrete construction would exceed the refinement cap."""


class LawMismatchError(ValueError):
    """Two samples were expected to share an empirical law but do not."""

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class NonInvarianceError(ValueError):
    """An operator failed a permutation-invariance or consistency check."""

    def __init__(self, message, indices=None):
        super().__init__(message)
        self.indices = indices


class ConvergenceError(RuntimeError):
    """An iterative scheme did not reach its residual target."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual
