"""Exception hierarchy shared by the solvers."""


class FLKSError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(FLKSError, ValueError):
    """A physical or numerical parameter violates its precondition."""


class SymmetryError(FLKSError, ValueError):
    """A velocity node set is not symmetric (first moment does not vanish)."""


class DomainError(FLKSError, ValueError):
    """A function was evaluated outside the interval where it is defined."""


class StepSizeError(FLKSError):
    """The requested time step violates the stability contract."""


class SchemeFailure(FLKSError):
    """A time step produced an inadmissible state (negative density, lost monotonicity)."""


class DivergenceError(SchemeFailure):
    """A time step produced NaN or infinite values."""


class UnsupportedConfiguration(FLKSError):
    """The requested combination of geometry and parameters has no solver."""


class SearchFailure(FLKSError):
    """A bracketing search did not find a sign change in its admissible range."""


class ConfigError(FLKSError, ValueError):
    """A run configuration is malformed; the message names the offending key."""
