"""Exception hierarchy shared by all modules."""


class CiboError(Exception):
    """Base class for errors raised by this package."""


class DomainError(CiboError, ValueError):
    """An argument lies outside the domain an operation is defined on."""


class ShapeError(CiboError, ValueError):
    """A contact mode or feature was requested that the object shape lacks."""


class PreconditionError(CiboError, ValueError):
    """Input violates a stated precondition (e.g. knot not in equilibrium)."""


class DegenerateMarginError(CiboError):
    """The nominal knot is already infeasible, so the margin interval is empty."""


class LayoutError(CiboError, ValueError):
    """A solution vector does not match the variable layout of its problem."""


class ConfigError(CiboError, ValueError):
    """Invalid or inconsistent configuration."""


class StaticInfeasibleError(CiboError):
    """No static force distribution satisfies the bounds at a configuration."""
