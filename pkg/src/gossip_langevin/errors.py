"""Exception types shared across the package.

The CLI maps each family to an exit code: validation errors exit with 2,
integrity errors with 3 and numeric failures with 4.
"""


class GossipLangevinError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ValidationError(GossipLangevinError, ValueError):
    """Invalid user input: configuration, data, or parameter values."""

    exit_code = 2


class ShapeError(ValidationError):
    """Array dimensions are inconsistent with the operation."""


class ConfigurationError(ValidationError):
    """Sampler or experiment parameters violate a validity condition."""


class DisconnectedGraphError(ValidationError):
    """A bound was requested for a network whose mixing matrix has gammaBar = 1."""


class IntegrityError(GossipLangevinError):
    """Persisted artifacts are missing, inconsistent, or corrupted."""

    exit_code = 3


class NumericError(GossipLangevinError, ArithmeticError):
    """A numerical routine failed or an argument lies outside a formula's domain."""

    exit_code = 4


class NotPSDError(NumericError):
    """Matrix has an eigenvalue below the negative clamping tolerance."""


class DomainError(NumericError):
    """A closed-form expression would divide by zero or take a negative root."""
