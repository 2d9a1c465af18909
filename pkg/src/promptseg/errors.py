"""Exception hierarchy shared by all promptseg modules."""


class PromptSegError(Exception):
    """Base class for every error raised by this package."""


class EmptyMask(PromptSegError):
    """An operation that needs foreground pixels received an empty mask."""


class ShapeMismatch(PromptSegError):
    """Array/grid dimensions of the operands do not agree."""


class InvalidCount(PromptSegError):
    """A point count outside the supported range (n >= 1)."""


class InsufficientRegion(PromptSegError):
    """More prompt points requested than the lesion has pixels."""


class InvalidSpec(PromptSegError):
    """A synthetic-case spec that cannot be realized (e.g. lesion larger than image)."""


class MissingFile(PromptSegError):
    """A case directory is missing one of its required files."""


class CorruptCase(PromptSegError):
    """A case directory is present but inconsistent or unparseable."""


class InvalidPrompt(PromptSegError):
    """A prompt point lies outside the image bounds."""


class InvalidThreshold(PromptSegError):
    """A binarization threshold outside [0, 1]."""


class BridgeError(PromptSegError):
    """The external segmenter bridge failed (handshake, protocol or I/O)."""


class EmptyRegion(PromptSegError):
    """A region with zero pixels where a distribution is required."""


class EmptyInput(PromptSegError):
    """An aggregate over an empty collection."""


class InvalidGrid(PromptSegError):
    """A region grid that does not fit the image."""


class DegenerateSample(PromptSegError):
    """A statistical test received a sample it is undefined for."""


class DegenerateBatch(PromptSegError):
    """Batch statistics requested over fewer than two rows."""


class RepeatedAction(PromptSegError):
    """The same region was selected twice within one episode."""


class EpisodeFinished(PromptSegError):
    """An action was requested after the episode ended."""


class InvalidConfig(PromptSegError):
    """An experiment or agent configuration that fails validation."""


class MissingModel(PromptSegError):
    """The agent arm of a study was requested without a trained checkpoint."""


class IoError(PromptSegError):
    """Report files could not be written."""
