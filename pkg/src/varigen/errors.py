"""Exceptions raised by varigen."""


class VarigenError(Exception):
    """Base class for all varigen errors."""

    exit_code = 1


class DomainPreconditionError(VarigenError):
    """A caller supplied input that violates a documented precondition."""

    exit_code = 2


class EmptyText(DomainPreconditionError):
    """Text to embed was empty after trimming."""


class UnsupportedImageShape(DomainPreconditionError, ValueError):
    """Image is too small or has the wrong number of dimensions."""


class ShapeMismatch(DomainPreconditionError, ValueError):
    """Arrays that must agree in shape do not."""


class DimensionMismatch(DomainPreconditionError, ValueError):
    """Vectors that must agree in dimension do not."""


class ZeroVector(DomainPreconditionError, ValueError):
    """A vector with zero norm was used where a direction is required."""


class NegativeVariance(DomainPreconditionError, ValueError):
    """A variance grid contains negative or non-finite entries."""


class EmptyInput(DomainPreconditionError):
    """An operation received an empty collection."""


class EmptyImageSet(EmptyInput):
    """An image set was empty."""


class EmptyTrainingSet(EmptyInput):
    """A memory bank was requested from no images."""


class EmptyPositiveSet(DomainPreconditionError):
    """No prompt candidate survived outlier filtering."""


class WordNotInLexicon(DomainPreconditionError):
    """The object word has no entries in the lexicon."""


class InsufficientImages(DomainPreconditionError):
    """A scenario asked for more good images than are available."""


class SingleClassInput(DomainPreconditionError):
    """AUROC was requested with only one label class present."""


class MissingMask(DomainPreconditionError):
    """An anomalous evaluation sample carries no ground-truth mask."""


class MaskMissing(DomainPreconditionError):
    """An anomalous dataset image has no mask file on disk."""


class LayoutViolation(DomainPreconditionError):
    """A dataset directory does not follow the expected layout."""


class UnknownStrategy(DomainPreconditionError):
    """An augmentation strategy name is not registered."""


class RunNotFound(DomainPreconditionError):
    """A run directory or run manifest does not exist."""


class InvalidConfiguration(DomainPreconditionError):
    """Configuration has unknown keys or out-of-range values."""


class BackendUnavailable(VarigenError):
    """A pretrained backend or its weights could not be loaded."""


class CacheCorrupt(VarigenError):
    """The embedding cache file failed its record length check."""


class NonFiniteLoss(VarigenError):
    """Training produced a NaN or infinite loss."""


class DecodeFailure(VarigenError):
    """An image file could not be decoded."""


class IoFailure(VarigenError):
    """Writing an artifact to disk failed."""
