"""Exception types raised across the package."""


class AssemblyError(RuntimeError):
    """The total potential q0 + q_eps was not positive at some quadrature point."""


class SolverError(RuntimeError):
    """Conjugate gradient stagnated; ``history`` holds the relative residuals."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


class ResourceLimitError(MemoryError):
    """A requested field grid would exceed the configured memory budget."""

    def __init__(self, message, required_bytes=0):
        super().__init__(message)
        self.required_bytes = required_bytes


class EnsembleError(RuntimeError):
    """Too many Monte Carlo samples failed."""

    def __init__(self, message, failures=None):
        super().__init__(message)
        self.failures = dict(failures or {})


class ConfigError(ValueError):
    """Configuration file could not be parsed or violates a constraint."""
