"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class ArtifactError(Exception):
    exit_code = 9


class ConfigError(ArtifactError, ValueError):
    exit_code = 2


class DomainError(ArtifactError, ValueError):
    """Argument outside the domain of definition of an operation."""
    exit_code = 2


class GeometryError(ArtifactError):
    exit_code = 3


class DegenerateDomainError(GeometryError):
    pass


class PartitionGapError(GeometryError):
    def __init__(self, msg, location=None):
        super().__init__(msg)
        self.location = location


class QuadratureFailure(ArtifactError):
    exit_code = 4

    def __init__(self, msg, estimate=None, error_bound=None, bracket=None):
        super().__init__(msg)
        self.estimate = estimate
        self.error_bound = error_bound
        self.bracket = bracket


class RoughnessError(QuadratureFailure):
    pass


class ReflectionFailure(ArtifactError):
    exit_code = 5

    def __init__(self, msg, cube=None):
        super().__init__(msg)
        self.cube = cube


class CapabilityError(ArtifactError):
    exit_code = 6


class EmptyReportError(ArtifactError):
    exit_code = 7


class OverflowFailure(ArtifactError, ArithmeticError):
    exit_code = 8


class PoisonedValueError(OverflowFailure):
    """A field returned NaN or inf where a finite value was required."""
