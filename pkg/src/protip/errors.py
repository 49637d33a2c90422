"""Exception types raised across the calibration pipeline."""


class ProtipError(Exception):
    """Base class for all pipeline errors."""


class InvalidArgument(ProtipError, ValueError):
    pass


class FormatError(ProtipError):
    """A file on disk does not follow the expected layout."""


class CoverageError(ProtipError):
    """The imaging geometry cannot cover the phantom."""


class InsufficientMatches(ProtipError):
    pass


class DegenerateConfiguration(ProtipError):
    """The calibration system is rank deficient."""


class NoConsensus(ProtipError):
    """No RANSAC hypothesis passed the residual gate."""


class InsufficientFiducials(ProtipError):
    pass
