"""Exception types shared across the package."""


class PatternMCError(Exception):
    """Base class for all package errors."""


class RejectedInputError(PatternMCError, ValueError):
    """An argument or state violates a documented precondition."""


class ChainAbortError(PatternMCError, RuntimeError):
    """A sampling chain hit an unrecoverable condition (e.g. NaN target).

    Carries the offending state for post-mortem inspection.
    """

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class AllRejectedError(PatternMCError, RuntimeError):
    """Every post-burn-in proposal was rejected; the chain never moved."""


class NonConvergenceError(PatternMCError, RuntimeError):
    """An iterative numerical routine failed to reach its tolerance."""
