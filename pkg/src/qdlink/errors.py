"""Exception types shared across the package."""


class QdlinkError(Exception):
    """Base class for all package errors."""


class ConfigError(QdlinkError):
    """Invalid simulation or analysis configuration."""


class NormalizationError(QdlinkError):
    """A Stokes vector that should be unit length is not."""


class RotationError(QdlinkError):
    """A matrix that should be a proper rotation is not."""


class BinningMismatchError(QdlinkError):
    """Histograms with incompatible binning were combined."""


class UndefinedCoefficientError(QdlinkError):
    """Correlation coefficient requested for zero total counts."""


class FitFailureError(QdlinkError):
    """Least-squares fit could not produce a usable solution."""


class CalibrationError(QdlinkError):
    """Basis calibration could not be completed consistently."""


class GridRangeError(QdlinkError):
    """Wavelength outside the supported CWDM grid."""


class StarkRangeError(QdlinkError):
    """Bias voltage outside the calibrated Stark model range."""


class FormatError(QdlinkError):
    """Malformed time-tag file."""
