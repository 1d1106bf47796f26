"""Exception types shared across the package."""


class FlockkitError(Exception):
    """Base class for all package-specific errors."""


class InputError(FlockkitError, ValueError):
    """Malformed operation input (shape mismatch, non-finite values, ...)."""


class DegenerateInputError(InputError):
    """Input is structurally valid but degenerate for the requested operation."""


class ConfigError(FlockkitError, ValueError):
    """Invalid configuration or violated hypothesis of a diagnostic."""


class PreconditionError(FlockkitError, ValueError):
    """A documented operation precondition does not hold."""


class NumericalError(FlockkitError, RuntimeError):
    """Numerical failure (blow-up, non-convergence, singular system)."""
