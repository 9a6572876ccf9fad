"""Exception types shared across the package."""


class KoopmanLmiError(Exception):
    """Base class for all errors raised by this package."""


class InvalidDataError(KoopmanLmiError):
    """Input data is malformed, non-finite, or dimensionally inconsistent."""


class InvalidParameterError(KoopmanLmiError):
    """A numeric or enumerated parameter is outside its admissible range."""


class EmptyDatasetError(KoopmanLmiError):
    """An operation requiring at least one snapshot received none."""


class NotPositiveSemidefiniteError(KoopmanLmiError):
    """A matrix required to be positive semidefinite is indefinite."""


class NotPositiveDefiniteError(KoopmanLmiError):
    """A matrix required to be positive definite is singular or indefinite."""


class FormulationError(KoopmanLmiError):
    """An optimization problem is structurally invalid or unsupported."""


class UnboundedNormError(KoopmanLmiError):
    """A system norm is unbounded (the state matrix is not stable)."""


class NumericalError(KoopmanLmiError):
    """A numerical routine produced an inconsistent or unusable result."""


class ConfigError(KoopmanLmiError):
    """A configuration document is malformed or violates its schema."""
