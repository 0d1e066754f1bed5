"""Exception hierarchy shared by every module."""


class ReprogramError(Exception):
    """Base class for all library errors."""


class DomainError(ReprogramError, ValueError):
    """An argument is outside the domain of a numerical operation."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class ShapeError(ReprogramError, ValueError):
    def __init__(self, what, expected, actual):
        super().__init__(f"{what}: expected shape {tuple(expected)}, got {tuple(actual)}")
        self.expected = tuple(expected)
        self.actual = tuple(actual)


class SpecError(ReprogramError, ValueError):
    """Invalid prompt geometry or generator specification."""


class CapacityError(ReprogramError, ValueError):
    """More target classes than source classes available for an injective map."""


class DataError(ReprogramError):
    """Empty classes, bad labels, malformed datasets."""


class TrainingError(ReprogramError):
    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class FormatError(ReprogramError):
    """Corrupt, truncated or mis-versioned container file."""


class ConsistencyError(FormatError):
    """Container parsed but its contents disagree with the declared architecture."""


class ConfigError(ReprogramError):
    """Experiment config violates the schema."""
