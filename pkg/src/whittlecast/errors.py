"""Exception hierarchy shared by all whittlecast modules."""


class WhittlecastError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(WhittlecastError):
    """Tensor/array dimensions do not satisfy an operation's contract."""


class NumericDomainError(WhittlecastError):
    """An elementwise operation was applied outside its numeric domain."""


class ContractError(WhittlecastError):
    """An API precondition was violated (wrong rank, wrong variable set, ...)."""


class InputError(WhittlecastError):
    """User-supplied data is unusable (too short, empty, malformed)."""


class CoverageError(WhittlecastError):
    """Overlap-add reconstruction has positions with no window coverage."""


class DegenerateRangeError(WhittlecastError):
    """A min-max normalization was requested on an all-equal value set."""


class ParseError(InputError):
    """A data file could not be parsed; message carries the line number."""


class NormalizationError(InputError):
    """z-score normalization impossible (constant series)."""


class TrainingDivergedError(WhittlecastError):
    """Loss became non-finite during training."""


class CheckpointError(WhittlecastError):
    """Checkpoint/container file problems."""


class CheckpointVersionError(CheckpointError):
    """Container format version not supported by this build."""


class CheckpointCorruptError(CheckpointError):
    """Container file truncated or structurally invalid."""


class ConfigError(WhittlecastError):
    """Run configuration invalid (unknown key, bad value, missing field)."""
