"""Exception types shared across the toolkit."""


class ToolkitError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(ToolkitError, ValueError):
    """An input violates a documented precondition or invariant."""


class NumericalGuardError(ToolkitError, RuntimeError):
    """A computation would exceed a configured size or cost budget."""
