"""Exception hierarchy shared by the model, filters and CLI."""


class PanicFSVError(Exception):
    """Base class for all package errors."""


class ConfigurationError(PanicFSVError, ValueError):
    """Invalid model structure or run configuration."""


class ParameterDomainError(PanicFSVError, ValueError):
    """A parameter lies outside its admissible domain."""


class DataError(PanicFSVError, ValueError):
    """Malformed or inconsistent returns data."""


class NumericalError(PanicFSVError, ArithmeticError):
    """A numerical routine failed (non-SPD covariance, singular system)."""


class FilterDegeneracyError(NumericalError):
    """Every particle weight became zero at some time step."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"all particle weights are zero at step {step}")
