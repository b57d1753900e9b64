"""Exception hierarchy shared across the package."""


class GfmSimError(Exception):
    """Base class."""


class ContractViolation(GfmSimError, ValueError):
    """An input broke an operation's precondition (shape, range, ordering)."""


class ConfigurationError(GfmSimError):
    """A name, file or config value could not be resolved."""


class NumericalError(GfmSimError, ArithmeticError):
    """A linear solve failed, e.g. a non positive-definite mass matrix."""


class DivergenceError(NumericalError):
    """A state component blew past the divergence limit."""


class CorruptFileError(GfmSimError):
    """A persisted artifact failed header or length validation."""
