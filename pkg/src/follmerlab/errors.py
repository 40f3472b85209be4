"""Exception types shared across the package."""


class FollmerLabError(Exception):
    """Base class for all package errors."""


class DomainError(FollmerLabError, ValueError):
    """An argument lies outside the domain of the operation."""


class ConfigurationError(FollmerLabError, ValueError):
    """A configuration value is missing, malformed or inconsistent."""


class UnsupportedConfigurationError(FollmerLabError, ValueError):
    """The inputs are well formed but the operation does not support them."""


class UnsupportedFamilyError(FollmerLabError, TypeError):
    """The target family does not provide the requested oracle."""


class NumericalDegeneracyError(FollmerLabError, ArithmeticError):
    """A numerical estimate is too degenerate to be trusted.

    Attributes:
        diagnostics: Mapping with the quantities that triggered the error.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class NonFiniteStateError(FollmerLabError, FloatingPointError):
    """An integrator produced a non-finite particle state.

    Attributes:
        step: Index of the step that produced the state.
        particle: Index of the first offending particle.
    """

    def __init__(self, step, particle):
        super().__init__(f"non-finite state at step {step}, particle {particle}")
        self.step = int(step)
        self.particle = int(particle)
