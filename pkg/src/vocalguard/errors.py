"""Exception hierarchy. CLI exit codes are keyed off these classes."""


class VocalGuardError(Exception):
    """Base class for all package errors."""


class ConfigError(VocalGuardError):
    """Bad or unknown configuration key/value."""


class DataError(VocalGuardError):
    """Problem with an input file or its contents."""


class WavFormatError(DataError):
    pass


class EmptyInputError(DataError):
    pass


class SampleRateError(DataError):
    pass


class EmptyFramesError(DataError):
    pass


class ManifestError(DataError):
    pass


class NumericError(VocalGuardError):
    """Non-finite loss or similar numerical breakdown."""


class ModeError(VocalGuardError):
    """Operation called with the model in the wrong train/eval mode."""


class ShapeError(VocalGuardError, ValueError):
    pass
