"""Exception types shared across the package.

Every error that represents a problem with the *data or physics* (as opposed
to bad files or arguments) derives from :class:`DomainError`; the CLI maps
those to exit code 2.
"""


class DomainError(Exception):
    """Base class for numerical/physical failures."""


class SingularDesign(DomainError):
    """The selected transitions do not determine all seven parameters."""

    def __init__(self, message, rank=None, condition_number=None):
        super().__init__(message)
        self.rank = rank
        self.condition_number = condition_number


class NyquistViolation(DomainError):
    pass


class InvalidSequence(DomainError):
    pass


class NonConvergence(DomainError):
    pass


class DegenerateData(DomainError):
    pass


class GridError(DomainError):
    pass


class NoFeatureFound(DomainError):
    pass


class SingularCorrection(DomainError):
    pass


class DimensionCap(DomainError):
    pass


class TruncationError(DomainError):
    pass


class AmbiguousStates(DomainError):
    def __init__(self, message, min_overlap=None):
        super().__init__(message)
        self.min_overlap = min_overlap
