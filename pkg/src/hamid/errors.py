"""Exception types shared across the package."""


class NumericDomainError(ArithmeticError):
    """A computation left its numeric domain (overflow, non-PD covariance, ...)."""


class DesignAbortError(RuntimeError):
    """A design run was aborted with a diagnostic (e.g. HMC acceptance collapsed)."""


class ConfigError(ValueError):
    """A run configuration failed validation.

    ``field`` names the offending entry when known, so CLI error objects can
    point at it.
    """

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field
