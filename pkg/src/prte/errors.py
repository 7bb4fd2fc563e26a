"""
Exception and warning types shared across the package.

Every failure mode that callers are expected to catch has a named type here;
numerical routines raise these rather than bare ValueError so that the CLI can
map them onto stable exit codes (config -> 2, invariant -> 3, numerical -> 4,
study threshold -> 5).
"""


class PrteError(Exception):
    """Base class for all package errors."""


class ConfigError(PrteError):
    """Malformed or inconsistent configuration (unknown key, bad type, bad range)."""


class ParameterOutOfRange(ConfigError):
    """A scalar parameter lies outside its admissible interval."""


class UnknownKind(ConfigError):
    """An enumerated name (initial-condition kind, study name, backend) is not recognised."""


class InvariantViolation(PrteError):
    """A structural invariant failed at runtime."""


class NorthPoleSingularity(InvariantViolation):
    """Stereographic projection evaluated at (or too close to) the projection pole."""


class SingularArgument(InvariantViolation):
    """Kernel evaluated at (or too close to) its non-integrable singularity."""


class StabilityViolation(InvariantViolation):
    """A time step produced growth that the scheme guarantees cannot happen."""


class NumericalError(PrteError):
    """Numerical routine failed to reach its accuracy contract."""


class QuadratureNonConvergence(NumericalError):
    """Successive quadrature refinements failed to agree to tolerance."""


class ThresholdError(PrteError):
    """A study ran to completion but a required threshold was not met."""


class NonMonotoneConvergence(ThresholdError):
    """A ladder of errors that must decrease strictly failed to do so."""


class WindowTooShort(ThresholdError):
    """A fitting window contains too few samples to fit a rate."""


class BoundaryLeakage(UserWarning):
    """Field has non-negligible support at the edge of a truncated plane grid."""
