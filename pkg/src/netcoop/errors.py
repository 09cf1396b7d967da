"""Exception types shared across the package."""


class NetcoopError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(NetcoopError, ValueError):
    """A parameter violates its documented domain (sign, range, shape)."""


class DimensionError(NetcoopError, ValueError):
    """Vector/matrix arguments have inconsistent lengths or shapes."""


class NumericalError(NetcoopError, RuntimeError):
    """A numerical routine failed to converge or produced an invalid state."""


class OracleFailureError(NetcoopError, RuntimeError):
    """A portfolio-manager subproblem solve could not be certified optimal."""


class ConfigError(NetcoopError, ValueError):
    """A run configuration is malformed (unknown or missing keys, bad values)."""


class MissingInputError(NetcoopError, FileNotFoundError):
    """Required input files are absent or unusable."""


class ComparisonMismatchError(NetcoopError, ValueError):
    """Scenario results cannot be compared (different seeds or inputs)."""
