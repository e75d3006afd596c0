"""Exception hierarchy shared by the library and the command line front-end."""


class BrwError(Exception):
    """Base class for every error raised by brwlab."""


class ConfigError(BrwError, ValueError):
    """Invalid model or run configuration."""


class NumericalError(BrwError, RuntimeError):
    """A numerical routine failed to deliver a trustworthy result."""


class IntegrationError(NumericalError):
    """ODE integration failed (step-size underflow, values out of range)."""


class EigenConvergenceError(NumericalError):
    def __init__(self, message, iterations):
        super().__init__(f"{message} (after {iterations} iterations)")
        self.iterations = iterations


class BracketError(NumericalError):
    """Root search interval does not bracket a sign change."""


class SingularSolveError(NumericalError):
    """Linear solve for a resolvent failed or returned non-finite values."""


class ParticleCapExceeded(BrwError):
    """A replica grew beyond its particle cap."""

    def __init__(self, message, capped=None, replicas=None):
        super().__init__(message)
        self.capped = capped
        self.replicas = replicas


class EmptySystemError(BrwError):
    """An event was requested from a particle system with no particles."""
