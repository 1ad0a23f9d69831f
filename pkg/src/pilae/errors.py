"""Exception hierarchy shared by every module."""


class PilaeError(Exception):
    """Base class for all errors raised by this package."""


class NumericalError(PilaeError):
    """An iterative kernel failed to converge or produced non-finite values."""


class TrainingError(PilaeError):
    """Layer or head training could not proceed (degenerate input, bad split)."""


class DivergenceError(TrainingError):
    """A gradient-based fit produced a NaN/Inf loss."""


class ParseError(PilaeError):
    """Malformed dataset file."""


class IdxFormatError(ParseError):
    """Wrong magic number or unsupported element type in an IDX file."""


class TruncatedFileError(ParseError):
    """File ended before the declared payload."""


class CountMismatchError(ParseError):
    """Image and label files disagree on the number of items."""


class ModelFormatError(PilaeError):
    """Malformed model file."""


class ChecksumError(ModelFormatError):
    pass


class VersionError(ModelFormatError):
    pass


class ShapeChainError(ModelFormatError):
    pass
