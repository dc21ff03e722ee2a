"""Exception types raised by the capcurv modules."""

from __future__ import annotations


class CapCurvError(Exception):
    """Base class for all library errors."""


class ArgumentError(CapCurvError, ValueError):
    pass


class UnsupportedAngleError(ArgumentError):
    pass


class DegenerateQuotientError(CapCurvError, ArithmeticError):
    pass


class ConeMembershipError(CapCurvError, ValueError):
    pass


class MissingBoundaryPolicyError(CapCurvError):
    pass


class PositivityError(CapCurvError, ValueError):
    pass


class NotAdmissibleError(CapCurvError):
    """Convexity of A = Hess h + h*sigma was lost.

    ``node`` is the (i, j) grid index of the smallest eigenvalue and
    ``margin`` the eigenvalue itself.
    """

    def __init__(self, message, node=None, margin=None):
        super().__init__(message)
        self.node = node
        self.margin = margin


class NoConvergenceError(CapCurvError):
    def __init__(self, message, last_iterate=None, residual_norm=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual_norm = residual_norm


class LostConvexityError(CapCurvError):
    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class ContinuationStuckError(CapCurvError):
    def __init__(self, message, path=None, diagnostics=None):
        super().__init__(message)
        self.path = path
        self.diagnostics = diagnostics or {}


class FredholmCompatibilityError(CapCurvError):
    pass


class SingularSystemError(CapCurvError):
    pass


class TTooLargeError(CapCurvError):
    def __init__(self, message, t_max=None):
        super().__init__(message)
        self.t_max = t_max


class OptimizerError(CapCurvError):
    pass
