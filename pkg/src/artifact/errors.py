"""Exception hierarchy shared by all modules."""


class ArtifactError(Exception):
    """Base class for all library errors."""


class ValidationError(ArtifactError, ValueError):
    """Invalid input or configuration."""

    def __init__(self, message, problems=None):
        super().__init__(message)
        self.problems = list(problems or [])


class NumericalError(ArtifactError, RuntimeError):
    """A numerical procedure failed to deliver its postcondition."""


class NonPhysicalState(ValidationError):
    pass


class DegreeTooSmall(ValidationError):
    pass


class IncompatibleSets(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class QuadratureConfigInvalid(ValidationError):
    pass


class GridMismatch(ValidationError):
    pass


class GridTooShort(ValidationError):
    pass


class NonMicroscopicSource(ValidationError):
    pass


class NewtonDivergence(NumericalError):
    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


class LaxViolation(NumericalError):
    pass


class EigSolverFailure(NumericalError):
    pass


class SingularMicroBlock(NumericalError):
    pass


class NonPositiveCoefficient(NumericalError):
    pass


class JacobianUnavailable(NumericalError):
    pass


class DegenerateMassFlux(NumericalError):
    pass


class OrbitEscape(NumericalError):
    pass


class SonicDegeneracy(NumericalError):
    pass


class ImaginaryAxisEigenvalue(NumericalError):
    def __init__(self, message, margin=None, eigenvalue=None):
        super().__init__(message)
        self.margin = margin
        self.eigenvalue = eigenvalue


class ContractionFailure(NumericalError):
    pass


class SingularBVP(NumericalError):
    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class NonMicroscopicError(NumericalError):
    pass


class ContractionStall(NumericalError):
    def __init__(self, message, lipschitz=None):
        super().__init__(message)
        self.lipschitz = lipschitz


class CacheError(ArtifactError, OSError):
    """Unreadable or mismatched tensor cache file."""
