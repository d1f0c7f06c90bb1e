"""Exception hierarchy shared by all modules."""


class MFGError(Exception):
    """Base class for every error raised by the package."""


class ConfigurationError(MFGError, ValueError):
    """Invalid grid, parameter or configuration value."""


class NonFiniteError(MFGError, ValueError):
    """A field contains NaN or infinite values."""


class GridMismatchError(MFGError, ValueError):
    """Operands live on different grids."""


class DomainError(MFGError, ValueError):
    """An argument lies outside the domain where a formula is defined.

    ``node`` holds the flat index of the first offending node when known.
    """

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class CongestionSingularityError(DomainError):
    """Density vanished where the congestion factor m**-tau is needed."""


class PositivityError(DomainError):
    """A density argument was not strictly positive."""


class SingularDerivativeError(DomainError):
    """The nonlocal derivative is undefined at the given base point."""


class InitializationError(MFGError):
    """No sign change found while bracketing the constant start."""


class NonConvergenceError(MFGError):
    """Newton or continuation stalled.

    ``best`` carries the best iterate found so far (may be None).
    """

    def __init__(self, message, best=None, trace=None):
        super().__init__(message)
        self.best = best
        self.trace = trace
