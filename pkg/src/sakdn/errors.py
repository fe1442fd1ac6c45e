"""Exception types shared across the package."""


class SakdnError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(SakdnError, ValueError):
    pass


class NonFiniteError(SakdnError, FloatingPointError):
    """A NaN or Inf appeared where only finite values are allowed."""


class RecordConsumedError(SakdnError, RuntimeError):
    pass


class ConstantSignalError(SakdnError, ValueError):
    """Min-max normalization is undefined because max == min."""


class DomainError(SakdnError, ValueError):
    pass


class AlignmentError(SakdnError, ValueError):
    """Modalities disagree on sample ids, labels or batch membership."""


class DataFormatError(SakdnError, ValueError):
    pass


class EmbeddingError(SakdnError, KeyError):
    def __str__(self):
        # KeyError repr-quotes its message by default
        return str(self.args[0]) if self.args else ""


class TrainingDiverged(SakdnError, RuntimeError):
    pass


class ConfigError(SakdnError, ValueError):
    pass
