"""Exception types raised across the package.

Every error carries its class name as the diagnostic label used by the CLI.
"""


class AnnealError(Exception):
    """Base class for all package errors."""


class NonHermitianInput(AnnealError, ValueError):
    pass


class DimensionZero(AnnealError, ValueError):
    pass


class NonSquareInput(AnnealError, ValueError):
    pass


class DimensionMismatch(AnnealError, ValueError):
    pass


class ConvexSolverNoConvergence(AnnealError, RuntimeError):
    """Raised when the exact coherence minimization fails to settle.

    ``best`` holds the smallest trace distance found, which is still a
    valid upper bound on the exact coherence.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class InvalidSize(AnnealError, ValueError):
    pass


class InvalidParameterRange(AnnealError, ValueError):
    pass


class TimeOutOfRange(AnnealError, ValueError):
    pass


class UnsupportedForm(AnnealError, ValueError):
    pass


class StepPolicyInvalid(AnnealError, ValueError):
    pass


class ControlCountMismatch(AnnealError, ValueError):
    pass


class DegenerateSpectrum(AnnealError, ValueError):
    def __init__(self, message, pair=None):
        super().__init__(message)
        self.pair = pair


class NoControls(AnnealError, ValueError):
    pass


class StatesNotRetained(AnnealError, ValueError):
    pass


class BracketInfeasible(AnnealError, RuntimeError):
    pass


class ConfigParseError(AnnealError, ValueError):
    pass


class HierarchyViolation(AnnealError, RuntimeError):
    pass
