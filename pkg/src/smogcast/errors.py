"""Exception hierarchy shared across the toolkit."""


class SmogcastError(Exception):
    """Base class for all toolkit errors."""


# --- data ingestion -------------------------------------------------------

class MissingColumnError(SmogcastError):
    """A required column is absent from a CSV header."""


class DuplicateTimestampError(SmogcastError):
    """The same hour appears twice in an input file."""


class NonHourlyCadenceError(SmogcastError):
    """A timestamp does not fall on a whole hour."""


class AllMissingColumnError(SmogcastError):
    """A column has no observed value, so gaps cannot be filled."""


# --- preprocessing --------------------------------------------------------

class OverlappingAssignmentError(SmogcastError):
    """Two split entries claim the same hours."""


class ConstantInputError(SmogcastError):
    """Zero-variance input where a correlation is requested."""


class LengthMismatchError(SmogcastError):
    """Paired sequences differ in length."""


class LayoutMismatchError(SmogcastError):
    """Source and target chunk layouts disagree."""


# --- numerics / models ----------------------------------------------------

class ShapeMismatchError(SmogcastError):
    """Operand shapes do not conform."""


class InvalidSpecError(SmogcastError):
    """A model description violates its constraints."""


class UnknownGroupError(SmogcastError):
    """A parameter group name does not exist on this model."""


class VersionMismatchError(SmogcastError):
    """A container file was written by an incompatible format version."""


class CorruptFileError(SmogcastError):
    """A container file fails its integrity checks."""


# --- training / search ----------------------------------------------------

class DivergedLossError(SmogcastError):
    """Training produced a non-finite loss."""


class EmptyAxisError(SmogcastError):
    """A grid axis has no candidate values."""


class TooFewPairsError(SmogcastError):
    """Not enough pairs to build the requested folds."""


# --- evaluation -----------------------------------------------------------

class ZeroVarianceError(SmogcastError):
    """Paired differences are all identical; the t statistic is undefined."""


class ScalerMismatchError(SmogcastError):
    """A model was trained against a different scaler than the one supplied."""


# --- command line ---------------------------------------------------------

class ConfigError(SmogcastError):
    """Bad or inconsistent run configuration."""

    exit_code = 2


class DataError(SmogcastError):
    """Input data could not be used."""

    exit_code = 3


class TrainError(SmogcastError):
    """Training failed."""

    exit_code = 4


class IoError(SmogcastError):
    """Reading or writing an artifact failed."""

    exit_code = 5
