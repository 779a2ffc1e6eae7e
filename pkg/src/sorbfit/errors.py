"""Exception hierarchy shared across the sorbfit package."""


class SorbfitError(Exception):
    """Base class for all sorbfit errors."""


class ValidationError(SorbfitError):
    """Input violates a documented precondition or schema."""


class MissingColumn(ValidationError):
    pass


class ParseError(ValidationError):
    def __init__(self, message, row=None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


class EmptyFile(ValidationError):
    pass


class DuplicateSampleKey(ValidationError):
    pass


class InsufficientSamples(ValidationError):
    pass


class InsufficientData(ValidationError):
    pass


class DomainError(SorbfitError):
    """Functional form evaluated outside its mathematical domain."""


class AllCostsInfinite(SorbfitError):
    """Every candidate in the optimizer population had non-finite cost."""


class NoConvergedFits(SorbfitError):
    pass


class NonPositiveK(ValidationError):
    pass


class SingleTemperature(ValidationError):
    pass


class NoInvertibleLevels(SorbfitError):
    pass


class MissingThermoInputs(ValidationError):
    pass


class AllMissingColumn(SorbfitError):
    pass


class SingularSystem(SorbfitError):
    pass


class DimensionMismatch(ValidationError):
    pass


class DivergenceDetected(SorbfitError):
    pass


class TooFewMembers(ValidationError):
    pass


class DegenerateSpread(SorbfitError):
    pass


class LengthMismatch(ValidationError):
    pass


class EmptyInput(ValidationError):
    pass


class ZeroResidualVariance(SorbfitError):
    pass
