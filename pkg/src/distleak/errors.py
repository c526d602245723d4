"""Exception hierarchy shared by every module."""


class DistleakError(Exception):
    """Base class for all library errors."""


class InvalidParameterError(DistleakError, ValueError):
    """An argument is outside its documented domain."""


class InvalidConfigurationError(DistleakError):
    """Components that must agree with each other do not."""


class UnsupportedConfigurationError(DistleakError):
    """A combination of options has no implementation."""


class SingularSystemError(DistleakError):
    """A linear system is (numerically) rank deficient."""

    def __init__(self, message, condition_number=float("inf")):
        super().__init__(message)
        self.condition_number = condition_number


class CapacityError(DistleakError):
    """A sampler was asked for more records than a stratum holds."""


class DegenerateCorpusError(DistleakError):
    """A training corpus cannot support the requested model."""


class DegenerateConfigurationError(DistleakError):
    """A Monte Carlo configuration produced too many unusable draws."""
