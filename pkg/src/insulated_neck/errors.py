class DomainError(ValueError):
    """Argument outside the domain where a formula is defined."""


class ConfigError(ValueError):
    """Invalid run configuration or parameter pack."""


class SolverError(RuntimeError):
    """Linear solve failed to reach the requested residual."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual
