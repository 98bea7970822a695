"""Exception types shared across the package."""


class CardioclrError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(CardioclrError):
    """Malformed container or file contents."""


class UnsupportedFormatError(FormatError):
    """Well-formed but unsupported encoding (e.g. multi-channel WAV)."""


class LabelError(CardioclrError):
    """Label string outside the declared label set of a dataset."""


class ParameterError(CardioclrError):
    """Invalid argument value (out of range, empty grid, bad edges...)."""


class ShapeError(CardioclrError):
    """Incompatible array shapes."""


class NumericError(CardioclrError):
    """NaN/Inf encountered, or an operation that requires nonzero norm got zero."""


class StateError(CardioclrError):
    """Operation called in the wrong order (e.g. backward before forward)."""


class ConfigError(CardioclrError):
    """Bad configuration file or inconsistent run configuration."""


class DataError(CardioclrError):
    """Dataset-level problem: empty evaluation set, degenerate variance,
    too few records for the requested statistic."""
