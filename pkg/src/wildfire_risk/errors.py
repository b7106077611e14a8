"""Exception hierarchy.

Three families map onto the command-line exit codes: configuration problems
(2), data problems (3) and numeric/training problems (4).
"""


class WildfireRiskError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class ConfigError(WildfireRiskError):
    exit_code = 2


class DataError(WildfireRiskError):
    exit_code = 3


class NumericError(WildfireRiskError):
    exit_code = 4


class FormatError(DataError):
    """File does not follow the expected layout (bad magic, version, dtype)."""


class LengthError(DataError):
    """File payload is shorter or longer than its header declares."""


class CapacityError(DataError):
    """Requested size exceeds what is available or addressable."""


class GeometryError(DataError):
    """Invalid polygon ring or raster geometry."""


class ShapeError(DataError):
    """Arrays or rasters with incompatible shapes or geometries."""


class CoverageError(DataError):
    """Required cells, years or locations are missing."""


class RangeError(DataError):
    """A requested year or window is not covered."""


class ClassError(DataError):
    """Land-cover value outside the known classes."""


class RegistryError(DataError):
    """Feature registry is inconsistent with the available layers."""


class AlignmentError(DataError):
    """Two score sets do not refer to the same projects."""


class DependencyError(DataError):
    """An upstream artifact needed by a command is missing."""


class SpecError(ConfigError):
    """Invalid split, generator or run specification."""


class DomainError(NumericError):
    """Input outside the mathematical domain of an operation."""


class FitError(NumericError):
    """A statistic cannot be fitted (e.g. empty sample set)."""


class DegenerateInputError(NumericError):
    """Input is valid but carries no information (single class, zero baseline)."""


class TrainingError(NumericError):
    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch
