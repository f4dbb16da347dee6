"""Error taxonomy shared by all slimsiam modules.

Every failure raised on purpose derives from SlimSiamError so callers can
catch the library's own errors without swallowing genuine bugs.
"""


class SlimSiamError(Exception):
    """Base class for all errors raised by slimsiam."""


class ShapeError(SlimSiamError):
    """Tensor shapes do not satisfy an operation's precondition."""


class DomainError(SlimSiamError):
    """A scalar argument lies outside its mathematical domain."""


class FormatError(SlimSiamError):
    """A file is not in the container format it claims to be."""


class UnsupportedFormatError(FormatError):
    """The container parsed, but the encoding is not supported."""


class UnsupportedRateError(FormatError):
    """Audio sample rate differs from the required 16000 Hz."""


class EmptyVoiceError(SlimSiamError):
    """Voice activity detection found no frame above threshold."""


class ConfigError(SlimSiamError):
    """A configuration document is invalid; message names the key path."""


class CheckpointError(SlimSiamError):
    """A checkpoint file is corrupt, truncated, or the wrong version."""


class VersionError(CheckpointError):
    """A binary artifact's version field does not match this library."""


class ContractError(SlimSiamError):
    """An operation was asked to violate a structural contract."""


class CapacityError(SlimSiamError):
    """A sampling request exceeds what the dataset can provide."""


class DivergenceError(SlimSiamError):
    """Training produced a non-finite loss; message names epoch and step."""


class BenchError(SlimSiamError):
    """A benchmark measurement is unusable (e.g. zero timing resolution)."""
